"""
Transfer-matrix engine.

Propagation is done in the (psi, psi') basis, where a constant segment of
length L and height V gives [[cos qL, sin(qL)/q], [-q sin qL, cos qL]] with
q^2 = k^2 - V, and a scatterer of strength c gives [[1, 0], [c, 1]]. At the
leads the result is conjugated into local traveling-wave amplitudes (R, L),
psi = R + L, psi' = ik(R - L), so that t = 1/m22 and r = -m21/m22 for a wave
incident from the left.

All internal helpers broadcast over k: they take k of any shape and return
(..., 2, 2) stacks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from errors import (
    BandStraddlesGapError,
    PeakLostError,
    ResonancePoleError,
    RootNotBracketedError,
    ValidationError,
)
from log import log_to
from potential import POSITION_TOL, Layout, Segment, StructureSpec, UnitCell

SERIES_THRESHOLD = 1e-4   # |qL| below which cos/sinc use their Taylor series
CLOSED_FORM_MIN_SIN = 1e-2
PASSBAND_TOL = 1e-10
PEAK_WINDOW_POINTS = 41

PSI_BASIS = "psi"
WAVE_BASIS = "wave"


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    matrix: np.ndarray
    basis: str
    k: complex

    @property
    def m11(self) -> complex:
        return complex(self.matrix[0, 0])

    @property
    def m12(self) -> complex:
        return complex(self.matrix[0, 1])

    @property
    def m21(self) -> complex:
        return complex(self.matrix[1, 0])

    @property
    def m22(self) -> complex:
        return complex(self.matrix[1, 1])

    @property
    def trace(self) -> complex:
        return self.m11 + self.m22

    @property
    def det(self) -> complex:
        return self.m11 * self.m22 - self.m12 * self.m21

    def __matmul__(self, other: TransferMatrix) -> TransferMatrix:
        if self.basis != other.basis:
            raise ValidationError(f"cannot compose {self.basis!r} and {other.basis!r} matrices")
        return TransferMatrix(self.matrix @ other.matrix, self.basis, self.k)


@dataclass(frozen=True)
class ScatteringCoefficients:
    t: complex
    r: complex

    @property
    def T(self) -> float:
        return abs(self.t) ** 2

    @property
    def R(self) -> float:
        return abs(self.r) ** 2


@dataclass(frozen=True)
class BlochPhase:
    phi: complex

    @property
    def in_passband(self) -> bool:
        return abs(self.phi.imag) < PASSBAND_TOL


@dataclass(frozen=True)
class PassBand:
    index: int          # 1-based, counted upwards from k = 0
    k_lo: float
    k_hi: float
    complete: bool = True   # False when clipped by the scan window

    @property
    def width(self) -> float:
        return self.k_hi - self.k_lo

    def contains(self, k: float) -> bool:
        return self.k_lo <= k <= self.k_hi


@dataclass(frozen=True)
class PtrRecord:
    band_index: int
    n: int              # 0 for an accidental (single-cell) resonance
    phi_n: float
    k: float
    transmission: float = 1.0
    kind: str = "bloch"


# Elementary matrices ----------------------------------------------------------

@dataclass(frozen=True)
class Element:
    """A constant segment (length > 0) or a scatterer (length == 0) at `start`."""

    start: float
    length: float
    height: float = 0.0
    strength: float = 0.0

    @property
    def is_scatterer(self) -> bool:
        return self.length == 0.0

    @property
    def end(self) -> float:
        return self.start + self.length


def elements_of(layout: Layout) -> list[Element]:
    """Left-to-right element list with segments split at every scatterer."""
    out: list[Element] = []
    deltas = layout.deltas
    j = 0
    for seg in layout.segments:
        x = seg.start
        while j < len(deltas) and deltas[j].position < seg.end - POSITION_TOL:
            pos = max(deltas[j].position, x)
            if pos > x + POSITION_TOL:
                out.append(Element(x, pos - x, seg.height))
                x = pos
            out.append(Element(x, 0.0, strength=deltas[j].strength))
            j += 1
        if seg.end > x + POSITION_TOL:
            out.append(Element(x, seg.end - x, seg.height))
    while j < len(deltas):
        out.append(Element(layout.right, 0.0, strength=deltas[j].strength))
        j += 1
    return out


def _cos_sinc(q2, length):
    """cos(qL) and sin(qL)/q as analytic functions of q^2."""
    q2 = np.asarray(q2, dtype=complex)
    z2 = q2 * length * length
    small = np.abs(z2) < SERIES_THRESHOLD ** 2
    q = np.sqrt(q2)
    safe_q = np.where(small, 1.0, q)
    cos = np.where(small, 1 - z2 / 2 + z2 * z2 / 24, np.cos(q * length))
    sinc = np.where(small, length * (1 - z2 / 6 + z2 * z2 / 120), np.sin(safe_q * length) / safe_q)
    return cos, sinc


def _segment_stack(length, height, k):
    q2 = np.asarray(k, dtype=complex) ** 2 - height
    c, s = _cos_sinc(q2, length)
    return np.stack([np.stack([c, s], axis=-1), np.stack([-q2 * s, c], axis=-1)], axis=-2)


def _delta_stack(strength, k):
    shape = np.shape(k)
    out = np.zeros(shape + (2, 2), dtype=complex)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 1, 0] = strength
    return out


def _identity_stack(k):
    return _delta_stack(0.0, k)


def element_stack(element: Element, k):
    if element.is_scatterer:
        return _delta_stack(element.strength, k)
    return _segment_stack(element.length, element.height, k)


def propagator_stack(elements: Sequence[Element], k):
    """psi-basis propagator across `elements`, broadcast over k."""
    P = _identity_stack(k)
    for element in elements:
        P = element_stack(element, k) @ P
    return P


def wave_basis_stack(P, k):
    """S^-1 P S with S = [[1, 1], [ik, -ik]]."""
    k = np.asarray(k, dtype=complex)
    p11, p12, p21, p22 = P[..., 0, 0], P[..., 0, 1], P[..., 1, 0], P[..., 1, 1]
    kp12, p21k = k * p12, p21 / k
    M = np.empty_like(P)
    M[..., 0, 0] = 0.5 * (p11 + p22 + 1j * (kp12 - p21k))
    M[..., 0, 1] = 0.5 * (p11 - p22 - 1j * (kp12 + p21k))
    M[..., 1, 0] = 0.5 * (p11 - p22 + 1j * (kp12 + p21k))
    M[..., 1, 1] = 0.5 * (p11 + p22 - 1j * (kp12 - p21k))
    return M


def segment_matrix(seg: Segment, k: complex) -> TransferMatrix:
    return TransferMatrix(_segment_stack(seg.length, seg.height, k), PSI_BASIS, k)


def delta_matrix(c_eff: float, k: complex = 0.0) -> TransferMatrix:
    return TransferMatrix(_delta_stack(c_eff, k), PSI_BASIS, k)


def to_wave_basis(P: TransferMatrix) -> TransferMatrix:
    if P.basis == WAVE_BASIS:
        return P
    if P.k == 0:
        raise ValidationError("traveling-wave basis is undefined at k = 0")
    return TransferMatrix(wave_basis_stack(P.matrix, P.k), WAVE_BASIS, P.k)


def _check_pole(M: TransferMatrix) -> None:
    if abs(M.m22) < 1e-14 * (1.0 + abs(M.m11)):
        raise ResonancePoleError(M.k)


def _coefficients(M: TransferMatrix) -> ScatteringCoefficients:
    _check_pole(M)
    return ScatteringCoefficients(1.0 / M.m22, -M.m21 / M.m22)


# Single cell ------------------------------------------------------------------

def cell_propagator(cell: UnitCell, k: complex) -> TransferMatrix:
    return TransferMatrix(propagator_stack(elements_of(cell.layout()), k), PSI_BASIS, k)


def cell_matrix(cell: UnitCell, k: complex) -> tuple[TransferMatrix, ScatteringCoefficients]:
    M = to_wave_basis(cell_propagator(cell, k))
    return M, _coefficients(M)


def half_trace(cell: UnitCell, k):
    """Tr M / 2, broadcast over k; the trace is basis independent so k = 0 is fine."""
    P = propagator_stack(elements_of(cell.layout()), k)
    return 0.5 * (P[..., 0, 0] + P[..., 1, 1])


def bloch_phase(M: TransferMatrix) -> BlochPhase:
    """cos(phi) = Tr M / 2 on the principal branch, Re phi in [0, pi]."""
    return BlochPhase(complex(np.arccos(complex(0.5 * M.trace))))


# Chebyshev powers -------------------------------------------------------------

def chebyshev_u(n: int, x):
    """Chebyshev polynomial of the second kind, U_n(x), for complex x.

    Uses sin((n+1)phi)/sin(phi) away from the band edges and the three-term
    recurrence where sin(phi) is small.
    """
    if n < -1:
        raise ValidationError(f"chebyshev_u needs n >= -1, got {n}")
    x = np.asarray(x, dtype=complex)
    if n == -1:
        out = np.zeros_like(x)
    elif n == 0:
        out = np.ones_like(x)
    else:
        phi = np.arccos(x)
        s = np.sin(phi)
        near_edge = np.abs(s) <= CLOSED_FORM_MIN_SIN
        closed = np.sin((n + 1) * phi) / np.where(near_edge, 1.0, s)
        if np.any(near_edge):
            u_prev, u = np.ones_like(x), 2 * x
            for _ in range(n - 1):
                u_prev, u = u, 2 * x * u - u_prev
            out = np.where(near_edge, u, closed)
        else:
            out = closed
    return out if out.ndim else out[()]


def _power_stack(M, n_cells: int):
    x = 0.5 * (M[..., 0, 0] + M[..., 1, 1])
    u1 = np.asarray(chebyshev_u(n_cells - 1, x))[..., None, None]
    u2 = np.asarray(chebyshev_u(n_cells - 2, x))[..., None, None]
    eye = np.broadcast_to(np.eye(2, dtype=complex), M.shape)
    return u1 * M - u2 * eye


def chebyshev_power(M: TransferMatrix, n_cells: int) -> TransferMatrix:
    """M^N = U_{N-1} M - U_{N-2} I for unimodular M."""
    if n_cells < 0:
        raise ValidationError(f"power must be >= 0, got {n_cells}")
    if n_cells == 0:
        return TransferMatrix(np.eye(2, dtype=complex), M.basis, M.k)
    return TransferMatrix(_power_stack(M.matrix, n_cells), M.basis, M.k)


def transmission_N(cell: UnitCell, n_cells: int, k):
    """T_N = 1 / (1 + (1/T - 1) U_{N-1}^2) for N copies of `cell`, broadcast over k."""
    P = propagator_stack(elements_of(cell.layout()), k)
    M = wave_basis_stack(P, k)
    x = 0.5 * (P[..., 0, 0] + P[..., 1, 1]).real
    u = np.asarray(chebyshev_u(n_cells - 1, x)).real
    # 1/T - 1 == |m21|^2 for a unimodular cell matrix
    out = 1.0 / (1.0 + np.abs(M[..., 1, 0]) ** 2 * u * u)
    return out if np.ndim(out) else float(out)


# Arbitrary structures ---------------------------------------------------------

def structure_propagator(spec: StructureSpec, k: complex) -> TransferMatrix:
    return TransferMatrix(propagator_stack(elements_of(spec.layout()), k), PSI_BASIS, k)


def structure_matrix(spec: StructureSpec, k: complex) -> TransferMatrix:
    return to_wave_basis(structure_propagator(spec, k))


def scattering(spec: StructureSpec, k: complex) -> ScatteringCoefficients:
    return _coefficients(structure_matrix(spec, k))


def transmission(spec: StructureSpec, k):
    """T = 1/|m22|^2 of the full (possibly perturbed) structure, broadcast over k."""
    M = wave_basis_stack(propagator_stack(elements_of(spec.layout()), k), k)
    out = 1.0 / np.abs(M[..., 1, 1]) ** 2
    return out if np.ndim(out) else float(out)


def locate_peak(spec: StructureSpec, k_lo: float, k_hi: float, xtol: float = 1e-12) -> tuple[float, float]:
    """Golden-section maximization of T on [k_lo, k_hi].

    Raises PeakLostError when the largest sampled T sits on the window
    boundary, i.e. there is no interior maximum to follow.
    """
    grid = np.linspace(k_lo, k_hi, PEAK_WINDOW_POINTS)
    values = transmission(spec, grid)
    i = int(np.argmax(values))
    if i == 0 or i == len(grid) - 1:
        raise PeakLostError(spec.epsilon, f"no interior transmission maximum in [{k_lo:.12g}, {k_hi:.12g}]")

    def objective(k):
        return -transmission(spec, k)

    try:
        res = minimize_scalar(objective, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                              options={"xtol": xtol})
    except ValueError:
        return float(grid[i]), float(values[i])
    if not grid[i - 1] <= res.x <= grid[i + 1] or -res.fun < values[i]:
        return float(grid[i]), float(values[i])
    return float(res.x), float(-res.fun)


def transmission_peaks(spec: StructureSpec, k_min: float, k_max: float, points: int = 4000) -> list[tuple[float, float]]:
    """Every local maximum of T on a grid, refined; returns (k, T) pairs."""
    grid = np.linspace(k_min, k_max, points)
    values = transmission(spec, grid)
    peaks = []
    for i in range(1, points - 1):
        if values[i] >= values[i - 1] and values[i] > values[i + 1]:
            try:
                peaks.append(locate_peak(spec, grid[i - 1], grid[i + 1]))
            except PeakLostError:
                peaks.append((float(grid[i]), float(values[i])))
    return peaks


# Bands and PTRs ---------------------------------------------------------------

def _scan_grid(k_lo: float, k_hi: float, density: int) -> np.ndarray:
    points = max(16, int(math.ceil((k_hi - k_lo) * density)) + 1)
    return np.linspace(k_lo, k_hi, points)


def detect_bands(cell: UnitCell, k_min: float, k_max: float, density: int = 2048,
                 edge_tol: float = 1e-12) -> list[PassBand]:
    """Pass bands |Tr M / 2| <= 1 overlapping [k_min, k_max].

    The scan always starts at k = 0 so band indices are absolute.
    """
    if not 0 <= k_min < k_max:
        raise ValidationError(f"need 0 <= k_min < k_max, got [{k_min!r}, {k_max!r}]")
    density = max(1, int(density)) * max(1.0, cell.period)
    grid = _scan_grid(0.0, k_max, int(density))
    x = half_trace(cell, grid).real
    inside = np.abs(x) <= 1.0

    def excess(k):
        return abs(half_trace(cell, k).real) - 1.0

    def refine(i):
        # edge between grid[i] and grid[i + 1]
        try:
            return brentq(excess, grid[i], grid[i + 1], xtol=edge_tol)
        except ValueError:
            return float(grid[i] if inside[i] else grid[i + 1])

    bands = []
    start = 0.0 if inside[0] else None
    for i in range(len(grid) - 1):
        if inside[i] == inside[i + 1]:
            continue
        edge = refine(i)
        if inside[i + 1]:
            start = edge
        else:
            bands.append((start, edge, True))
            start = None
    if start is not None:
        bands.append((start, float(grid[-1]), False))

    out = []
    for index, (lo, hi, complete) in enumerate(bands, start=1):
        if hi < k_min or lo > k_max:
            continue
        clipped = lo < k_min
        out.append(PassBand(index, max(lo, k_min), hi, complete and not clipped))
    return out


def nth_band(cell: UnitCell, index: int, density: int = 2048, edge_tol: float = 1e-12) -> PassBand:
    if index < 1:
        raise ValidationError(f"band index must be >= 1, got {index}")
    k_max = (index + 1) * math.pi / cell.period
    for _ in range(8):
        bands = [b for b in detect_bands(cell, 0.0, k_max, density, edge_tol) if b.index == index and b.complete]
        if bands:
            return bands[0]
        k_max *= 2
    raise RootNotBracketedError(f"pass band #{index} not found below k = {k_max:.6g}")


def _single_cell_reflectance(cell: UnitCell, k):
    M = wave_basis_stack(propagator_stack(elements_of(cell.layout()), k), k)
    return np.abs(M[..., 1, 0]) ** 2 / np.abs(M[..., 1, 1]) ** 2


def accidental_ptrs(cell: UnitCell, n_cells: int, band: PassBand, density: int = 2048,
                    tol: float = 1e-10) -> list[PtrRecord]:
    """Frequencies inside the band where the single cell is itself reflectionless."""
    grid = _scan_grid(max(band.k_lo, 1e-9), band.k_hi, density)
    refl = _single_cell_reflectance(cell, grid)
    if np.all(refl < tol):
        return []
    out = []
    for i in range(1, len(grid) - 1):
        if not (refl[i] <= refl[i - 1] and refl[i] < refl[i + 1]):
            continue
        res = minimize_scalar(lambda k: float(_single_cell_reflectance(cell, k)),
                              bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-13})
        if res.fun < tol:
            k = float(res.x)
            phi = float(np.arccos(np.clip(half_trace(cell, k).real, -1.0, 1.0)))
            out.append(PtrRecord(band.index, 0, phi, k, float(transmission_N(cell, n_cells, k)), "accidental"))
    return out


def _band_for(cell: UnitCell, band, density: int) -> PassBand:
    if isinstance(band, PassBand):
        return band
    k_lo, k_hi = (float(v) for v in band)
    if not 0 < k_lo < k_hi:
        raise ValidationError(f"need 0 < k_lo < k_hi, got [{k_lo!r}, {k_hi!r}]")
    mid = 0.5 * (k_lo + k_hi)
    index = 0
    for b in detect_bands(cell, 0.0, k_hi, density):
        if b.contains(mid):
            index = b.index
    return PassBand(index, k_lo, k_hi, complete=False)


def find_ptrs(cell: UnitCell, n_cells: int, band, density: int = 2048, xtol: float = 1e-13,
              include_accidental: bool = True, log_manager=None) -> list[PtrRecord]:
    """PTRs of N copies of `cell` inside one pass band, sorted by k.

    `band` is a PassBand or a (k_lo, k_hi) interval lying in a single band.
    For each n = 1..N-1 the roots of Tr M / 2 - cos(n pi / N) are bracketed on
    a grid and refined with Brent's method.
    """
    if n_cells < 2:
        raise ValidationError(f"PTRs need N >= 2 cells, got {n_cells}")
    band = _band_for(cell, band, density)
    grid = _scan_grid(band.k_lo, band.k_hi, density)
    x = half_trace(cell, grid).real
    interior = np.abs(x[1:-1]) > 1.0 + 1e-9
    if np.any(interior):
        raise BandStraddlesGapError(band.k_lo, band.k_hi, float(grid[1:-1][np.argmax(interior)]))

    records = []
    for n in range(1, n_cells):
        phi_n = n * math.pi / n_cells
        target = math.cos(phi_n)
        g = x - target

        def offset(k, target=target):
            return half_trace(cell, k).real - target

        roots = []
        for i in range(len(grid) - 1):
            if g[i] == 0.0:
                roots.append(float(grid[i]))
            elif g[i] * g[i + 1] < 0:
                roots.append(brentq(offset, grid[i], grid[i + 1], xtol=xtol))
        if g[-1] == 0.0:
            roots.append(float(grid[-1]))
        if not roots:
            if band.complete:
                raise RootNotBracketedError(f"PTR n={n} not bracketed in the full band {band.index} "
                                            f"[{band.k_lo:.12g}, {band.k_hi:.12g}]")
            log_to(log_manager, "WARNING", f"PTR n={n} not bracketed in [{band.k_lo:.12g}, {band.k_hi:.12g}]")
            continue
        for k in roots:
            T = float(transmission_N(cell, n_cells, k))
            if T < 1.0 - 1e-8:
                log_to(log_manager, "WARNING", f"PTR n={n} at k={k:.12g} has T_N = {T:.12g}")
            records.append(PtrRecord(band.index, n, phi_n, float(k), T))

    if include_accidental:
        records.extend(accidental_ptrs(cell, n_cells, band, density))
    if not records:
        raise RootNotBracketedError(f"no PTR found in [{band.k_lo:.12g}, {band.k_hi:.12g}]")
    records.sort(key=lambda r: r.k)
    log_to(log_manager, "INFO", f"found {len(records)} PTRs in band {band.index}")
    return records
