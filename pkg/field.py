"""
Stationary scattering fields psi(x) over a structure.

The incident wave is A e^{+ikx} (from the left) or A e^{-ikx} (from the
right) in global coordinates. The field is built by propagating the purely
outgoing wave on the far side back through the structure and rescaling it to
the requested incident amplitude. Inside every constant piece the field is
kept in closed form through its value and slope at the piece start, so point
values and integrals of psi^2 are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from errors import ValidationError
from potential import POSITION_TOL, StructureSpec
from transfer import Element, _cos_sinc, element_stack, elements_of

SERIES_Z = 1e-2
LEFT = "left"
RIGHT = "right"


def _psi2_weights(q2, length):
    """Integrals over [0, L] of cos^2, cos*sinc and sinc^2 with z = 2qL."""
    q2 = complex(q2)
    z2 = 4.0 * q2 * length * length
    if abs(z2) < SERIES_Z ** 2:
        sinc = 1 - z2 / 6 + z2 * z2 / 120
        versine = 0.5 - z2 / 24 + z2 * z2 / 720
        tail = 1 / 6 - z2 / 120 + z2 * z2 / 5040
    else:
        z = np.sqrt(z2)
        sinc = np.sin(z) / z
        versine = (1 - np.cos(z)) / z2
        tail = (z - np.sin(z)) / (z2 * z)
    L = length
    return 0.5 * L * (1 + sinc), L * L * versine, 2 * L ** 3 * tail


@dataclass(frozen=True)
class FieldPiece:
    """psi on [start, start + length] from its value and slope at `start`."""

    start: float
    length: float
    height: float
    psi0: complex
    dpsi0: complex

    @property
    def end(self) -> float:
        return self.start + self.length

    def evaluate(self, k: complex, u):
        """(psi, psi') at local offsets u in [0, length]."""
        q2 = complex(k) ** 2 - self.height
        u = np.asarray(u, dtype=float)
        c, s = _cos_sinc(q2, u)
        return c * self.psi0 + s * self.dpsi0, -q2 * s * self.psi0 + c * self.dpsi0

    def integral_psi2(self, k: complex, a: float | None = None, b: float | None = None) -> complex:
        a = self.start if a is None else max(a, self.start)
        b = self.end if b is None else min(b, self.end)
        if b <= a:
            return 0j
        psi0, dpsi0 = self.evaluate(k, a - self.start)
        i_cc, i_cs, i_ss = _psi2_weights(complex(k) ** 2 - self.height, b - a)
        return complex(psi0 * psi0 * i_cc + 2 * psi0 * dpsi0 * i_cs + dpsi0 * dpsi0 * i_ss)


@dataclass(frozen=True, eq=False)
class WaveField:
    k: complex
    side: str
    amplitude: complex
    total_length: float
    pieces: tuple[FieldPiece, ...]
    x: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    scatterers: tuple[tuple[float, float], ...] = field(default=())

    @property
    def left(self) -> float:
        return -0.5 * self.total_length

    @property
    def right(self) -> float:
        return 0.5 * self.total_length

    @property
    def psi_left(self) -> complex:
        return complex(self.psi_at(self.left))

    @property
    def psi_right(self) -> complex:
        return complex(self.psi_at(self.right))

    def _check_inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.left - POSITION_TOL) or np.any(x > self.right + POSITION_TOL):
            raise ValidationError(f"position outside the structure [{self.left!r}, {self.right!r}]")
        return np.clip(x, self.left, self.right)

    def _locate(self, x: np.ndarray, limit: str) -> np.ndarray:
        starts = np.array([p.start for p in self.pieces])
        side = "right" if limit == RIGHT else "left"
        return np.clip(np.searchsorted(starts, x, side=side) - 1, 0, len(self.pieces) - 1)

    def _evaluate(self, x, limit: str):
        x = self._check_inside(x)
        flat = np.atleast_1d(x)
        idx = self._locate(flat, limit)
        psi = np.empty(flat.shape, dtype=complex)
        dpsi = np.empty(flat.shape, dtype=complex)
        for j in np.unique(idx):
            mask = idx == j
            piece = self.pieces[j]
            psi[mask], dpsi[mask] = piece.evaluate(self.k, flat[mask] - piece.start)
        if np.ndim(x) == 0:
            return psi[0], dpsi[0]
        return psi.reshape(x.shape), dpsi.reshape(x.shape)

    def psi_at(self, x):
        """psi at arbitrary positions; continuous, so junctions are unambiguous."""
        return self._evaluate(x, RIGHT)[0]

    def dpsi_at(self, x, limit: str = RIGHT):
        """psi' at x; at a scatterer `limit` picks the one-sided value."""
        if limit not in (LEFT, RIGHT):
            raise ValidationError(f"limit must be 'left' or 'right', got {limit!r}")
        return self._evaluate(x, limit)[1]

    def integral_psi2(self, a: float | None = None, b: float | None = None) -> complex:
        """Closed-form integral of psi^2 (not |psi|^2) over [a, b]."""
        parts = [p.integral_psi2(self.k, a, b) for p in self.pieces]
        return complex(math.fsum(v.real for v in parts), math.fsum(v.imag for v in parts))

    def flux(self) -> np.ndarray:
        """Im(conj(psi) psi') on every sample; constant for real V and real k."""
        return np.imag(np.conj(self.psi) * self.dpsi)

    def rows(self) -> Iterator[tuple[float, float, float, float, float, float]]:
        for x, psi, dpsi in zip(self.x, self.psi, self.dpsi):
            yield float(x), psi.real, psi.imag, abs(psi), dpsi.real, dpsi.imag


@dataclass(frozen=True)
class OverlapIntegrals:
    I_psi2: complex
    boundary_term: complex
    point_values: tuple[complex, ...]


def _inverse(element: Element, k: complex) -> np.ndarray:
    if element.is_scatterer:
        return element_stack(Element(element.start, 0.0, strength=-element.strength), k)
    return element_stack(Element(element.start, -element.length, element.height), k)


def _edge_states(elements: Sequence[Element], k: complex, side: str) -> list[np.ndarray]:
    """(psi, psi') entering every element from the left, before scaling."""
    if side == LEFT:
        v = np.array([1.0, 1j * k], dtype=complex)
        states = [None] * len(elements)
        for i in reversed(range(len(elements))):
            v = _inverse(elements[i], k) @ v
            states[i] = v
        return states + [np.array([1.0, 1j * k], dtype=complex)]
    v = np.array([1.0, -1j * k], dtype=complex)
    states = []
    for element in elements:
        states.append(v)
        v = element_stack(element, k) @ v
    return states + [v]


def solve_field(spec: StructureSpec, k: float, side: str = LEFT, amplitude: complex = 1.0,
                min_samples: int = 64, samples_per_phase: int = 16) -> WaveField:
    if side not in (LEFT, RIGHT):
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")
    if not k > 0:
        raise ValidationError(f"k must be > 0, got {k!r}")
    D = spec.total_length
    elements = elements_of(spec.layout())
    states = _edge_states(elements, k, side)
    phase = np.exp(-0.5j * k * D)
    if side == LEFT:
        psi, dpsi = states[0]
        scale = amplitude * phase / (0.5 * (psi + dpsi / (1j * k)))
    else:
        psi, dpsi = states[-1]
        scale = amplitude * phase / (0.5 * (psi - dpsi / (1j * k)))

    pieces, scatterers = [], []
    xs, psis, dpsis = [], [], []
    for element, state in zip(elements, states):
        psi0, dpsi0 = scale * state
        if element.is_scatterer:
            scatterers.append((element.start, element.strength))
            continue
        piece = FieldPiece(element.start, element.length, element.height, complex(psi0), complex(dpsi0))
        pieces.append(piece)
        q = abs(np.sqrt(complex(k) ** 2 - element.height))
        count = max(min_samples, samples_per_phase * int(math.ceil(q * element.length)))
        u = np.linspace(0.0, element.length, count)
        p, dp = piece.evaluate(k, u)
        xs.append(element.start + u)
        psis.append(p)
        dpsis.append(dp)
    return WaveField(k, side, complex(amplitude), D, tuple(pieces),
                     np.concatenate(xs), np.concatenate(psis), np.concatenate(dpsis), tuple(scatterers))


def symmetrizing_amplitude(k: float, D: float, n: int) -> complex:
    """Incident amplitude making Re psi even and Im psi odd at PTR n."""
    phase = 0.5 * k * D - (0.5 * math.pi if n % 2 else 0.0)
    return complex(np.exp(1j * phase))


def edge_normalized_amplitude(k: float, D: float) -> complex:
    """Incident amplitude giving psi(-D/2) = 1 at a reflectionless frequency."""
    return complex(np.exp(0.5j * k * D))


def overlap_integrals(wave: WaveField, delta_positions: Sequence[float] = ()) -> OverlapIntegrals:
    left, right = wave.psi_left, wave.psi_right
    values = tuple(complex(wave.psi_at(x)) ** 2 for x in delta_positions)
    return OverlapIntegrals(wave.integral_psi2(), 1j * (right * right - left * left), values)


def field_asymmetry(left: WaveField, right: WaveField) -> float:
    """max | |psi_L| - |psi_R| | / max |psi_L| on the samples of `left`."""
    other = np.abs(right.psi_at(left.x))
    return float(np.max(np.abs(np.abs(left.psi) - other)) / np.max(np.abs(left.psi)))
