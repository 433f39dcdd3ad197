"""
First-order resonance shifts and PTR-protecting scatterer design.

For a perturbation epsilon*V1 of an unperturbed structure V0, a reflectionless
frequency moves as k = k0 + epsilon*k1 with

    k1 = integral(V1 psi0^2) / (i [psi0^2(D/2) - psi0^2(-D/2)] + 2 k0 integral(psi0^2))

where psi0 is the PTR field. A PTR survives to first order when Im k1 = 0;
with the symmetrizing incident phase the denominator is real, so for Dirac
scatterers that reduces to sum_m c_m Re psi0(x_m) Im psi0(x_m) = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from errors import (
    AccidentalLocationError,
    DegenerateShiftError,
    PeakLostError,
    SingularDesignError,
    SymmetryRequiredError,
    ValidationError,
)
from field import LEFT, WaveField, edge_normalized_amplitude, solve_field, symmetrizing_amplitude
from log import log_to
from potential import DiracScatterer, Perturbation, StructureSpec, UnitCell, cell_edges
from transfer import (
    Element,
    PtrRecord,
    cell_matrix,
    elements_of,
    find_ptrs,
    locate_peak,
    nth_band,
    propagator_stack,
)

CENTERS = "centers"
EDGES = "edges"
SLOPE_FLOOR = 1e-12
SLOPE_CEILING = 0.1


@dataclass(frozen=True)
class ShiftResult:
    n: int
    k0: float
    k1: complex
    protected: bool


@dataclass(frozen=True)
class DesignProblem:
    spec: StructureSpec
    positions: tuple[float, ...]
    fixed: Mapping[int, float]          # 0-based position index -> strength
    targets: tuple[int, ...]
    ptrs: tuple[PtrRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(x) for x in self.positions))
        object.__setattr__(self, "targets", tuple(int(n) for n in self.targets))
        object.__setattr__(self, "ptrs", tuple(self.ptrs))
        object.__setattr__(self, "fixed", dict(self.fixed))


@dataclass(frozen=True)
class DesignResult:
    positions: tuple[float, ...]
    strengths: tuple[float, ...]
    targets: tuple[int, ...]
    residuals: tuple[float, ...]
    condition_number: float

    def deltas(self) -> tuple[DiracScatterer, ...]:
        return tuple(DiracScatterer(x, c) for x, c in zip(self.positions, self.strengths))

    def perturbation(self) -> Perturbation:
        return Perturbation(self.deltas())

    def scaled(self, factor: float) -> DesignResult:
        return DesignResult(self.positions, tuple(factor * c for c in self.strengths), self.targets,
                            tuple(abs(factor) * r for r in self.residuals), self.condition_number)

    def as_dict(self) -> dict:
        return {
            "positions": list(self.positions),
            "strengths": list(self.strengths),
            "targets": list(self.targets),
            "residuals": list(self.residuals),
            "condition_number": self.condition_number,
        }


@dataclass(frozen=True)
class PairingReport:
    kind: str
    n: int
    table: tuple[ShiftResult, ...]
    expected: frozenset[int]

    @property
    def protected(self) -> frozenset[int]:
        return frozenset(s.n for s in self.table if s.protected)

    @property
    def holds(self) -> bool:
        return self.expected <= self.protected


@dataclass(frozen=True)
class SweepResult:
    epsilons: tuple[float, ...]
    peak_k: tuple[float, ...]
    peak_T: tuple[float, ...]
    fitted_slope: float
    truncated: bool = False
    lost_at: float | None = None

    @property
    def one_minus_T(self) -> tuple[float, ...]:
        return tuple(1.0 - t for t in self.peak_T)

    @property
    def last_valid_epsilon(self) -> float | None:
        return self.epsilons[-1] if self.epsilons else None

    def rows(self):
        for eps, k, t in zip(self.epsilons, self.peak_k, self.peak_T):
            yield eps, k, t, 1.0 - t


def _require_unperturbed(spec0: StructureSpec) -> None:
    if not spec0.perturbation.is_empty or spec0.epsilon != 0.0:
        raise ValidationError("expected the unperturbed structure (epsilon = 0, no perturbation)")


def ptr_amplitude(spec0: StructureSpec, ptr: PtrRecord) -> complex:
    if ptr.n > 0:
        return symmetrizing_amplitude(ptr.k, spec0.total_length, ptr.n)
    return edge_normalized_amplitude(ptr.k, spec0.total_length)


def ptr_field(spec0: StructureSpec, ptr: PtrRecord) -> WaveField:
    """Left-incidence PTR field with the symmetrizing phase."""
    return solve_field(spec0, ptr.k, LEFT, ptr_amplitude(spec0, ptr))


def _shift_from_field(spec0: StructureSpec, ptr: PtrRecord, wave: WaveField, perturbation: Perturbation,
                      protect_tol: float) -> ShiftResult:
    terms = [d.strength * complex(wave.psi_at(d.position)) ** 2 for d in perturbation.deltas]
    if perturbation.height_offsets is not None:
        for offset, (a, b) in zip(perturbation.height_offsets, spec0.barrier_spans()):
            if offset:
                terms.append(offset * wave.integral_psi2(a, b))
    numerator = complex(math.fsum(t.real for t in terms), math.fsum(t.imag for t in terms))
    left, right = wave.psi_left, wave.psi_right
    denominator = 1j * (right * right - left * left) + 2 * ptr.k * wave.integral_psi2()
    if abs(denominator) < 1e-12:
        raise DegenerateShiftError(f"first-order denominator vanishes for PTR n={ptr.n} at k={ptr.k:.12g}")
    k1 = numerator / denominator
    return ShiftResult(ptr.n, ptr.k, k1, abs(k1.imag) < protect_tol * ptr.k)


def first_order_shift(spec0: StructureSpec, ptr: PtrRecord, perturbation: Perturbation,
                      wave: WaveField | None = None, protect_tol: float = 1e-10) -> ShiftResult:
    """k1 for one PTR; `wave` may carry any global phase."""
    _require_unperturbed(spec0)
    StructureSpec(spec0.cell, spec0.n_cells, perturbation)   # validates positions and offsets
    if wave is None:
        wave = ptr_field(spec0, ptr)
    return _shift_from_field(spec0, ptr, wave, perturbation, protect_tol)


def shift_table(spec0: StructureSpec, ptrs: Sequence[PtrRecord], perturbation: Perturbation,
                protect_tol: float = 1e-10) -> list[ShiftResult]:
    return [first_order_shift(spec0, ptr, perturbation, protect_tol=protect_tol) for ptr in ptrs]


def _ptr_by_index(ptrs: Sequence[PtrRecord], n: int) -> PtrRecord:
    for ptr in ptrs:
        if ptr.n == n and ptr.kind == "bloch":
            return ptr
    raise ValidationError(f"no PTR with n={n} among {[p.n for p in ptrs]}")


def design_rows(spec0: StructureSpec, ptrs: Sequence[PtrRecord], targets: Sequence[int],
                positions: Sequence[float]) -> np.ndarray:
    """Re psi Im psi at every position (columns) for every target PTR (rows)."""
    rows = []
    for n in targets:
        wave = ptr_field(spec0, _ptr_by_index(ptrs, n))
        psi = np.asarray(wave.psi_at(np.asarray(positions, dtype=float)))
        rows.append(psi.real * psi.imag)
    return np.array(rows, dtype=float).reshape(len(targets), len(positions))


def design_strengths(problem: DesignProblem, max_condition: float = 1e12, log_manager=None) -> DesignResult:
    """Solve sum_m c_m Re psi_n(x_m) Im psi_n(x_m) = 0 for the free strengths."""
    spec0 = problem.spec
    _require_unperturbed(spec0)
    n_pos = len(problem.positions)
    for i in problem.fixed:
        if not 0 <= i < n_pos:
            raise ValidationError(f"fixed strength index c{i + 1} outside c1..c{n_pos}")
    if not problem.targets:
        raise ValidationError("design needs at least one target PTR")
    if not problem.fixed:
        raise SingularDesignError("no strength is fixed: the system is homogeneous and only has c = 0")
    free = [i for i in range(n_pos) if i not in problem.fixed]
    if len(free) != len(problem.targets):
        raise ValidationError(
            f"{len(problem.targets)} target(s) need exactly {len(problem.targets)} free strength(s), "
            f"got {len(free)} ({n_pos} positions, {len(problem.fixed)} fixed)")
    StructureSpec(spec0.cell, spec0.n_cells, Perturbation(tuple(DiracScatterer(x, 1.0) for x in problem.positions)))

    G = design_rows(spec0, problem.ptrs, problem.targets, problem.positions)
    scale = float(np.max(np.abs(G))) if G.size else 0.0
    for i in range(n_pos):
        if np.all(np.abs(G[:, i]) < 1e-10 * scale):
            raise AccidentalLocationError(i, problem.positions[i])

    fixed_idx = sorted(problem.fixed)
    c_fixed = np.array([problem.fixed[i] for i in fixed_idx], dtype=float)
    A = G[:, free]
    b = -G[:, fixed_idx] @ c_fixed
    cond = float(np.linalg.cond(A))
    if not math.isfinite(cond) or cond > max_condition:
        raise SingularDesignError(f"design system is singular (condition number {cond:.3g})", cond)
    c_free = np.linalg.solve(A, b)

    strengths = np.zeros(n_pos)
    strengths[fixed_idx] = c_fixed
    strengths[free] = c_free
    residuals = tuple(float(r) for r in np.abs(G @ strengths))
    log_to(log_manager, "INFO", f"designed strengths {np.array2string(strengths, precision=6)} "
                                f"(cond {cond:.3g})")
    return DesignResult(problem.positions, tuple(float(c) for c in strengths), problem.targets, residuals, cond)


# Closed-form products at cell centers and edges ------------------------------------

def center_g(n_cells: int, n: int, p: int) -> float:
    phi = n * math.pi / n_cells
    return math.sin((n_cells - p) * phi) ** 2 - math.sin((p - 1) * phi) ** 2


def edge_g(n_cells: int, n: int, p: int) -> float:
    return math.sin(2 * p * n * math.pi / n_cells)


def _require_symmetric(cell: UnitCell) -> None:
    if not cell.is_mirror_symmetric:
        raise SymmetryRequiredError("closed-form products need a mirror-symmetric unit cell")


def _ptr_k(cell: UnitCell, n_cells: int, n: int, k: float | None, band: int) -> float:
    if not 1 <= n <= n_cells - 1:
        raise ValidationError(f"PTR index n={n} outside 1..{n_cells - 1}")
    if k is not None:
        return float(k)
    ptrs = find_ptrs(cell, n_cells, nth_band(cell, band), include_accidental=False)
    return _ptr_by_index(ptrs, n).k


def _left_half(cell: UnitCell) -> list[Element]:
    """Elements on [-d/2, 0); a scatterer at the center leaves psi there unchanged."""
    out = []
    for e in elements_of(cell.layout()):
        if e.start >= 0.0:
            break
        if e.is_scatterer:
            out.append(e)
        else:
            out.append(Element(e.start, min(e.end, 0.0) - e.start, e.height))
    return out


def center_f(cell: UnitCell, n_cells: int, n: int, k: float) -> float:
    """w_R w_I / sin^2((N-1) phi_n), w = psi at the cell center for (psi, psi') = (1, ik) at its left edge."""
    P = propagator_stack(_left_half(cell), k)
    w = P[0, 0] + 1j * k * P[0, 1]
    denom = math.sin((n_cells - 1) * n * math.pi / n_cells) ** 2
    if denom < 1e-14:
        raise DegenerateShiftError(f"sin((N-1) phi_n) vanishes for N={n_cells}, n={n}")
    return float(w.real * w.imag / denom)


def edge_f(cell: UnitCell, n_cells: int, n: int, k: float) -> float:
    """(1 + lambda) / (2 (1 - lambda)) with lambda = (e^{i phi_n} - m11) / m12."""
    M, _ = cell_matrix(cell, k)
    phi = n * math.pi / n_cells
    lam = (np.exp(1j * phi) - M.m11) / M.m12
    return float((0.5 * (1 + lam) / (1 - lam)).real)


def center_product(cell: UnitCell, n_cells: int, n: int, p: int, k: float | None = None, band: int = 1) -> float:
    """Re psi Im psi at the center of cell p for the PTR field normalized to psi(-D/2) = 1."""
    _require_symmetric(cell)
    if not 1 <= p <= n_cells:
        raise ValidationError(f"center index p={p} outside 1..{n_cells}")
    k = _ptr_k(cell, n_cells, n, k, band)
    return center_f(cell, n_cells, n, k) * center_g(n_cells, n, p)


def edge_product(cell: UnitCell, n_cells: int, n: int, p: int, k: float | None = None, band: int = 1) -> float:
    """Re psi Im psi at edge b_p for the PTR field normalized to psi(-D/2) = 1."""
    _require_symmetric(cell)
    if not 0 <= p <= n_cells:
        raise ValidationError(f"edge index p={p} outside 0..{n_cells}")
    k = _ptr_k(cell, n_cells, n, k, band)
    return edge_f(cell, n_cells, n, k) * edge_g(n_cells, n, p)


# Pairing -------------------------------------------------------------------------

def expected_partners(n_cells: int, n: int, kind: str, edge_indices: Sequence[int] = ()) -> frozenset[int]:
    """PTR indices protected together with n for a center or edge placement."""
    found = {n, n_cells - n}
    same_parity = len({p % 2 for p in edge_indices}) == 1
    if kind == EDGES and n_cells % 2 == 0 and edge_indices and same_parity:
        for m in (n_cells // 2 + n, n_cells // 2 - n):
            m %= n_cells
            if m:
                found.update({m, n_cells - m})
    return frozenset(m for m in found if 1 <= m <= n_cells - 1)


def _edge_indices(spec0: StructureSpec, positions: Sequence[float]) -> list[int]:
    edges = cell_edges(spec0)
    out = []
    for x in positions:
        p = int(round((x + 0.5 * spec0.total_length) / spec0.period))
        if not 0 <= p <= spec0.n_cells or abs(edges[p] - x) > 1e-9:
            raise ValidationError(f"position {x!r} is not a cell edge")
        out.append(p)
    return out


def pairing_check(spec0: StructureSpec, kind: str, design: DesignResult, n: int,
                  ptrs: Sequence[PtrRecord], protect_tol: float = 1e-10, log_manager=None) -> PairingReport:
    """Im k1 for every PTR of the designed perturbation, with the partners the placement predicts."""
    if kind not in (CENTERS, EDGES):
        raise ValidationError(f"placement kind must be 'centers' or 'edges', got {kind!r}")
    edge_indices = _edge_indices(spec0, design.positions) if kind == EDGES else []
    table = tuple(shift_table(spec0, [p for p in ptrs if p.kind == "bloch"], design.perturbation(), protect_tol))
    report = PairingReport(kind, n, table, expected_partners(spec0.n_cells, n, kind, edge_indices))
    level = "SUCCESS" if report.holds else "WARNING"
    log_to(log_manager, level, f"protected {sorted(report.protected)}, expected {sorted(report.expected)}")
    return report


# Epsilon sweeps --------------------------------------------------------------------

def fit_loglog_slope(epsilons: Sequence[float], one_minus_t: Sequence[float],
                     floor: float = SLOPE_FLOOR, ceiling: float = SLOPE_CEILING) -> float:
    eps = np.asarray(epsilons, dtype=float)
    y = np.asarray(one_minus_t, dtype=float)
    mask = (y > floor) & (y < ceiling) & (eps > 0)
    if np.count_nonzero(mask) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(eps[mask]), np.log(y[mask]), 1)
    return float(slope)


def ptr_window(spec0: StructureSpec, ptr: PtrRecord, ptrs: Sequence[PtrRecord] | None = None) -> float:
    """Half the distance from `ptr` to its nearest unperturbed neighbour."""
    if ptrs is None:
        ptrs = find_ptrs(spec0.cell, spec0.n_cells, nth_band(spec0.cell, ptr.band_index), include_accidental=False)
    gaps = [abs(p.k - ptr.k) for p in ptrs if abs(p.k - ptr.k) > 1e-12]
    if not gaps:
        raise ValidationError("need at least two PTRs to size the tracking window")
    return 0.5 * min(gaps)


def epsilon_sweep(spec0: StructureSpec, perturbation: Perturbation, ptr: PtrRecord, eps_grid: Sequence[float],
                  ptrs: Sequence[PtrRecord] | None = None, log_manager=None) -> SweepResult:
    """Follow the transmission peak born at `ptr` as epsilon grows."""
    _require_unperturbed(spec0)
    eps_grid = [float(e) for e in eps_grid]
    if any(e <= 0 for e in eps_grid) or any(b <= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValidationError("epsilon grid must be positive and strictly increasing")
    window = ptr_window(spec0, ptr, ptrs)
    band_width = nth_band(spec0.cell, ptr.band_index).width if ptr.band_index > 0 else float("inf")

    epsilons, peak_k, peak_t = [], [], []
    k_prev = ptr.k
    lost_at = None
    for i, eps in enumerate(eps_grid):
        spec = StructureSpec(spec0.cell, spec0.n_cells, perturbation, eps)
        try:
            k, T = locate_peak(spec, k_prev - window, k_prev + window)
            if abs(k - k_prev) > 0.1 * band_width:
                raise PeakLostError(eps, f"peak jumped by {abs(k - k_prev):.3g}")
        except PeakLostError as e:
            log_to(log_manager, "WARNING", f"sweep truncated: {e}")
            lost_at = eps
            break
        epsilons.append(eps)
        peak_k.append(k)
        peak_t.append(T)
        k_prev = k
        if log_manager is not None and (i + 1) % 10 == 0:
            log_manager.progress(i + 1, len(eps_grid), "epsilon sweep")

    slope = fit_loglog_slope(epsilons, [1.0 - t for t in peak_t])
    return SweepResult(tuple(epsilons), tuple(peak_k), tuple(peak_t), slope, lost_at is not None, lost_at)
