"""
Reflectionless modes: complex k where the left-incidence reflection vanishes.

The root function is the lower-left entry of the traveling-wave transfer
matrix (the numerator of r). It is analytic in k, so Newton's method with a
central finite-difference derivative works anywhere in the complex plane.
Roots already found are deflated out so that further seeds move on to new
ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import (
    ContinuationLostError,
    NonConvergenceError,
    SymmetryRequiredError,
    TriviallyReflectionlessError,
    ValidationError,
)
from log import log_to
from potential import Perturbation, StructureSpec
from retry_handler import create_continuation_retry_handler
from transfer import elements_of, propagator_stack, wave_basis_stack

DUPLICATE_TOL = 1e-9
REAL_TOL = 1e-9
PAIR_TOL = 1e-8
COALESCENCE_GAP = 1e-6
NOISE_FLOOR = 1e-14


@dataclass(frozen=True)
class ReflectionlessMode:
    k: complex
    residual: float

    @property
    def is_real(self) -> bool:
        return abs(self.k.imag) < REAL_TOL * abs(self.k.real)


@dataclass(frozen=True)
class PtPairReport:
    applicable: bool
    closed: bool
    real: tuple[complex, ...]
    pairs: tuple[tuple[complex, complex], ...]
    unmatched: tuple[complex, ...]
    message: str


@dataclass(frozen=True)
class EpTrace:
    epsilons: tuple[float, ...]
    k_a: tuple[complex, ...]
    k_b: tuple[complex, ...]
    coalescence_eps: float | None = None

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(abs(a - b) for a, b in zip(self.k_a, self.k_b))

    def rows(self):
        for eps, a, b, gap in zip(self.epsilons, self.k_a, self.k_b, self.gaps):
            yield eps, a.real, a.imag, b.real, b.imag, gap


class _Reflection:
    """m21 and m22 of a fixed structure as functions of complex k."""

    def __init__(self, spec: StructureSpec):
        self.spec = spec
        self.elements = elements_of(spec.layout())

    def matrix(self, k: complex) -> np.ndarray:
        return wave_basis_stack(propagator_stack(self.elements, complex(k)), complex(k))

    def numerator(self, k: complex) -> complex:
        return complex(self.matrix(k)[1, 0])

    def residual(self, k: complex) -> float:
        M = self.matrix(k)
        return float(abs(M[1, 0]) / abs(M[1, 1]))


def reflection_numerator(spec: StructureSpec, k: complex) -> complex:
    """Entry of the traveling-wave matrix whose zeros are reflectionless points."""
    return _Reflection(spec).numerator(k)


def _newton(func, seed: complex, roots: Sequence[complex], max_iterations: int, tol: float,
            step_scale: float) -> complex:
    """Newton on func(k) / prod(k - roots) with a central-difference derivative."""

    def deflated(k):
        value = func(k)
        for r in roots:
            value /= (k - r)
        return value

    k = complex(seed)
    for _ in range(max_iterations):
        g = deflated(k)
        h = step_scale * max(abs(k), 1.0)
        dg = (deflated(k + h) - deflated(k - h)) / (2 * h)
        if dg == 0:
            break
        dk = g / dg
        k -= dk
        if abs(dk) < tol * max(abs(k), 1.0):
            return k
        if abs(func(k)) < NOISE_FLOOR:
            return k
    raise NonConvergenceError(seed, max_iterations)


def _check_reflecting(refl: _Reflection, probes: Sequence[complex]) -> None:
    ks = list(probes) + [0.7 / refl.spec.period, 1.9 / refl.spec.period, 3.3 / refl.spec.period]
    if all(refl.residual(k) < 1e-12 for k in ks if k != 0):
        raise TriviallyReflectionlessError("structure does not reflect at any probed frequency")


def _solve_modes(refl: _Reflection, seeds: Sequence[complex], max_iterations: int, tol: float,
                 step_scale: float, strict: bool, log_manager) -> list[ReflectionlessMode]:
    roots: list[complex] = []
    for seed in seeds:
        try:
            k = _newton(refl.numerator, seed, roots, max_iterations, tol, step_scale)
            # polish on the undeflated function
            k = _newton(refl.numerator, k, (), max_iterations, tol, step_scale)
        except NonConvergenceError as e:
            if strict:
                raise
            log_to(log_manager, "WARNING", f"{e}; seed skipped")
            continue
        if any(abs(k - r) < DUPLICATE_TOL for r in roots):
            log_to(log_manager, "WARNING", f"seed {seed!r} converged to a known mode k = {k!r}; skipped")
            continue
        roots.append(k)
    return [ReflectionlessMode(k, refl.residual(k)) for k in roots]


def reflectionless_modes(spec: StructureSpec, seeds: Sequence[complex], max_iterations: int = 100,
                         tol: float = 1e-12, step_scale: float = 1e-7, log_manager=None) -> list[ReflectionlessMode]:
    """Zeros of the reflection numerator reached from `seeds`, one per distinct root."""
    if not seeds:
        raise ValidationError("need at least one seed")
    refl = _Reflection(spec)
    _check_reflecting(refl, seeds)
    modes = _solve_modes(refl, seeds, max_iterations, tol, step_scale, False, log_manager)
    log_to(log_manager, "INFO", f"{len(modes)} reflectionless mode(s) from {len(seeds)} seed(s)")
    return modes


def pt_pair_check(modes: Sequence[ReflectionlessMode], spec: StructureSpec, tol: float = PAIR_TOL) -> PtPairReport:
    """Check that the mode set is closed under complex conjugation."""
    if not spec.is_mirror_symmetric:
        return PtPairReport(False, False, (), (), tuple(m.k for m in modes),
                            "structure is not mirror symmetric: PT symmetry absent, check skipped")
    real, pairs, unmatched = [], [], []
    pending = [m for m in modes]
    while pending:
        mode = pending.pop(0)
        if mode.is_real:
            real.append(mode.k)
            continue
        scale = max(abs(mode.k), 1.0)
        for i, other in enumerate(pending):
            if abs(other.k - mode.k.conjugate()) < tol * scale:
                pairs.append((mode.k, pending.pop(i).k))
                break
        else:
            unmatched.append(mode.k)
    closed = not unmatched
    message = "closed under conjugation" if closed else f"{len(unmatched)} mode(s) without a conjugate partner"
    return PtPairReport(True, closed, tuple(real), tuple(pairs), tuple(unmatched), message)


# Exceptional points ------------------------------------------------------------------

def _ordered(a: complex, b: complex) -> tuple[complex, complex]:
    """Real pair by real part, complex pair with the upper-half-plane root first."""
    if abs(a.imag - b.imag) > REAL_TOL * max(abs(a), abs(b)):
        return (a, b) if a.imag > b.imag else (b, a)
    return (a, b) if a.real <= b.real else (b, a)


class _PairSolver:
    def __init__(self, spec0: StructureSpec, perturbation: Perturbation, max_jump: float,
                 max_iterations: int, tol: float, step_scale: float):
        self.spec0 = spec0
        self.perturbation = perturbation
        self.max_jump = max_jump
        self.max_iterations = max_iterations
        self.tol = tol
        self.step_scale = step_scale

    def solve(self, eps: float, prev: tuple[complex, complex]) -> tuple[complex, complex]:
        spec = StructureSpec(self.spec0.cell, self.spec0.n_cells, self.perturbation, eps)
        refl = _Reflection(spec)
        spread = max(abs(prev[0] - prev[1]), 1e-6)
        delta = 1e-3 * spread
        seeds = (prev[0] + 1j * delta, prev[1] - 1j * delta)
        modes = _solve_modes(refl, seeds, self.max_iterations, self.tol, self.step_scale, True, None)
        if len(modes) != 2:
            raise ContinuationLostError(eps, "both seeds converged to the same mode")
        pair = _ordered(modes[0].k, modes[1].k)
        for new, old in zip(sorted(pair, key=lambda z: z.real), sorted(prev, key=lambda z: z.real)):
            if abs(new - old) > self.max_jump:
                raise ContinuationLostError(eps, f"mode jumped from {old:.9g} to {new:.9g}")
        return pair

    @staticmethod
    def is_real_pair(pair: tuple[complex, complex]) -> bool:
        return all(abs(k.imag) < REAL_TOL * abs(k.real) for k in pair)

    @staticmethod
    def is_conjugate_pair(pair: tuple[complex, complex]) -> bool:
        a, b = pair
        return abs(a - b.conjugate()) < PAIR_TOL * max(abs(a), 1.0) and abs(a.imag) > 0


def trace_exceptional_point(spec0: StructureSpec, perturbation: Perturbation, seeds: Sequence[complex],
                            eps_grid: Sequence[float], max_halvings: int = 8, max_iterations: int = 100,
                            tol: float = 1e-12, step_scale: float = 1e-7, retry_handler=None,
                            log_manager=None) -> EpTrace:
    """Continue two reflectionless modes in epsilon and locate where they coalesce."""
    if len(seeds) != 2:
        raise ValidationError(f"need exactly two seeds, got {len(seeds)}")
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid or eps_grid[0] < 0 or any(b <= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValidationError("epsilon grid must be non-negative and strictly increasing")
    if not StructureSpec(spec0.cell, spec0.n_cells, perturbation, 1.0).is_mirror_symmetric:
        raise SymmetryRequiredError("exceptional-point tracing needs a mirror-symmetric perturbation")
    if not spec0.unperturbed.is_mirror_symmetric:
        raise SymmetryRequiredError("exceptional-point tracing needs a mirror-symmetric structure")

    handler = retry_handler or create_continuation_retry_handler(max_halvings, log_manager)
    k0 = tuple(complex(s) for s in seeds)
    solver = _PairSolver(spec0.unperturbed, perturbation, 0.75 * abs(k0[0] - k0[1]) + 1e-3,
                         max_iterations, tol, step_scale)

    eps_done, ka, kb = [], [], []
    eps_cur = 0.0
    pair = solver.solve(0.0, k0)

    def advance(step, target):
        eps = min(eps_cur + step, target)
        return eps, solver.solve(eps, pair)

    for i, target in enumerate(eps_grid):
        while eps_cur < target:
            try:
                eps_cur, pair = handler.execute_with_retry(advance, target - eps_cur, target)
            except (ContinuationLostError, NonConvergenceError) as e:
                partial = EpTrace(tuple(eps_done), tuple(ka), tuple(kb),
                                  _bisect_coalescence(solver, eps_done, ka, kb))
                raise ContinuationLostError(eps_cur, f"continuation aborted ({e})", partial) from e
        eps_done.append(target)
        ka.append(pair[0])
        kb.append(pair[1])
        if log_manager is not None and (i + 1) % 10 == 0:
            log_manager.progress(i + 1, len(eps_grid), "exceptional-point trace")

    coalescence = _bisect_coalescence(solver, eps_done, ka, kb)
    if coalescence is not None:
        log_to(log_manager, "SUCCESS", f"modes coalesce at epsilon = {coalescence:.10g}")
    else:
        log_to(log_manager, "INFO", "no coalescence on the epsilon grid")
    return EpTrace(tuple(eps_done), tuple(ka), tuple(kb), coalescence)


def _bisect_coalescence(solver: _PairSolver, eps: Sequence[float], ka: Sequence[complex],
                        kb: Sequence[complex], xtol: float = 1e-10) -> float | None:
    """Bisect on the real/complex character of the pair between the bracketing grid points."""
    for i in range(1, len(eps)):
        before, after = (ka[i - 1], kb[i - 1]), (ka[i], kb[i])
        if solver.is_real_pair(before) and solver.is_conjugate_pair(after):
            lo, hi = eps[i - 1], eps[i]
            pair_lo = before
            while hi - lo > xtol * max(1.0, hi):
                mid = 0.5 * (lo + hi)
                try:
                    pair_mid = solver.solve(mid, pair_lo)
                except (ContinuationLostError, NonConvergenceError):
                    break
                if solver.is_real_pair(pair_mid):
                    lo, pair_lo = mid, pair_mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        if abs(ka[i] - kb[i]) < COALESCENCE_GAP:
            return eps[i]
    return None

