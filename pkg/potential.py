"""
Scattering structures built from piecewise-constant segments and Dirac scatterers.

Lengths are in units of the cell period d, heights in 1/d^2 and scatterer
strengths in 1/d. A unit cell is described in its own frame, centered on 0;
a StructureSpec replicates it N times over [-D/2, D/2] with D = N*d and may
carry a perturbation epsilon*V1 on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from errors import ValidationError

SYMMETRY_TOL = 1e-12
POSITION_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    length: float
    height: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.length) or self.length <= 0:
            raise ValidationError(f"segment length must be > 0, got {self.length!r}")
        if not math.isfinite(self.height):
            raise ValidationError(f"segment height must be finite, got {self.height!r}")


@dataclass(frozen=True)
class DiracScatterer:
    position: float
    strength: float

    def __post_init__(self):
        if not (math.isfinite(self.position) and math.isfinite(self.strength)):
            raise ValidationError(f"scatterer fields must be finite, got {self!r}")


def _match_mirrored(deltas: Sequence[DiracScatterer], tol: float) -> bool:
    """True if every scatterer at x has a partner of equal strength at -x."""
    unmatched = list(deltas)
    while unmatched:
        first = unmatched.pop(0)
        if abs(first.position) <= tol:
            continue
        for i, other in enumerate(unmatched):
            if abs(other.position + first.position) <= tol and abs(other.strength - first.strength) <= tol:
                unmatched.pop(i)
                break
        else:
            return False
    return True


def _segments_palindromic(segments: Sequence[Segment], tol: float) -> bool:
    for a, b in zip(segments, reversed(segments)):
        if abs(a.length - b.length) > tol or abs(a.height - b.height) > tol:
            return False
    return True


@dataclass(frozen=True)
class UnitCell:
    """One period of V0; scatterer positions are cell-local, in [-d/2, d/2]."""

    segments: tuple[Segment, ...]
    deltas: tuple[DiracScatterer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "deltas", tuple(self.deltas))
        if not self.segments:
            raise ValidationError("unit cell needs at least one segment")
        half = 0.5 * self.period
        for i, delta in enumerate(self.deltas):
            if abs(delta.position) > half + POSITION_TOL:
                raise ValidationError(
                    f"cell scatterer #{i + 1} at {delta.position!r} lies outside [-d/2, d/2] (d = {self.period!r})")

    @classmethod
    def free(cls, period: float = 1.0) -> UnitCell:
        return cls((Segment(period, 0.0),))

    @classmethod
    def rectangular_barrier(cls, width: float, height: float, period: float = 1.0) -> UnitCell:
        """Barrier of the given width centered in a cell of free space."""
        if not 0 < width < period:
            raise ValidationError(f"barrier width {width!r} must lie in (0, {period!r})")
        gap = 0.5 * (period - width)
        return cls((Segment(gap, 0.0), Segment(width, height), Segment(gap, 0.0)))

    @property
    def period(self) -> float:
        return math.fsum(seg.length for seg in self.segments)

    @property
    def is_mirror_symmetric(self) -> bool:
        return (_segments_palindromic(self.segments, SYMMETRY_TOL)
                and _match_mirrored(self.deltas, SYMMETRY_TOL))

    @property
    def barrier_indices(self) -> tuple[int, ...]:
        """Indices of the segments with nonzero height."""
        return tuple(i for i, seg in enumerate(self.segments) if seg.height != 0.0)

    def segment_offsets(self) -> list[float]:
        """Cell-local start of every segment, measured from -d/2."""
        offsets, acc = [], 0.0
        for seg in self.segments:
            offsets.append(acc)
            acc += seg.length
        return offsets

    def layout(self) -> Layout:
        """The cell alone on [-d/2, d/2]."""
        half = 0.5 * self.period
        placed = [PlacedSegment(-half + off, seg.length, seg.height)
                  for off, seg in zip(self.segment_offsets(), self.segments)]
        return Layout(tuple(placed), merge_scatterers(self.deltas, -half, half), -half, half)


@dataclass(frozen=True)
class Perturbation:
    """V1: extra scatterers (global coordinates) and per-barrier height offsets."""

    deltas: tuple[DiracScatterer, ...] = ()
    height_offsets: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(self.deltas))
        if self.height_offsets is not None:
            object.__setattr__(self, "height_offsets", tuple(float(h) for h in self.height_offsets))

    @property
    def is_empty(self) -> bool:
        no_offsets = self.height_offsets is None or all(h == 0.0 for h in self.height_offsets)
        return no_offsets and all(d.strength == 0.0 for d in self.deltas)

    def scaled(self, factor: float) -> Perturbation:
        offsets = None if self.height_offsets is None else tuple(factor * h for h in self.height_offsets)
        return Perturbation(tuple(DiracScatterer(d.position, factor * d.strength) for d in self.deltas), offsets)

    def __add__(self, other: Perturbation) -> Perturbation:
        if self.height_offsets is None:
            offsets = other.height_offsets
        elif other.height_offsets is None:
            offsets = self.height_offsets
        else:
            if len(self.height_offsets) != len(other.height_offsets):
                raise ValidationError("cannot add perturbations with different barrier counts")
            offsets = tuple(a + b for a, b in zip(self.height_offsets, other.height_offsets))
        return Perturbation(self.deltas + other.deltas, offsets)


@dataclass(frozen=True)
class PlacedSegment:
    start: float
    length: float
    height: float

    @property
    def end(self) -> float:
        return self.start + self.length


@dataclass(frozen=True)
class Layout:
    """Global, merged description used by the propagation code."""

    segments: tuple[PlacedSegment, ...]
    deltas: tuple[DiracScatterer, ...]
    left: float
    right: float


@dataclass(frozen=True)
class StructureSpec:
    cell: UnitCell
    n_cells: int
    perturbation: Perturbation = field(default_factory=Perturbation)
    epsilon: float = 0.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValidationError(f"n_cells must be an integer >= 1, got {self.n_cells!r}")
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon!r}")
        half = 0.5 * self.total_length
        for i, delta in enumerate(self.perturbation.deltas):
            if abs(delta.position) > half + POSITION_TOL:
                raise ValidationError(
                    f"perturbation scatterer #{i + 1} at {delta.position!r} lies outside [-{half!r}, {half!r}]")
        offsets = self.perturbation.height_offsets
        if offsets is not None and len(offsets) != self.barrier_count:
            raise ValidationError(
                f"height_offsets has {len(offsets)} entries but the structure has {self.barrier_count} barriers")

    @property
    def period(self) -> float:
        return self.cell.period

    @property
    def total_length(self) -> float:
        return self.n_cells * self.period

    @property
    def barrier_count(self) -> int:
        return self.n_cells * len(self.cell.barrier_indices)

    @property
    def unperturbed(self) -> StructureSpec:
        return replace(self, perturbation=Perturbation(), epsilon=0.0)

    def with_epsilon(self, epsilon: float) -> StructureSpec:
        return replace(self, epsilon=float(epsilon))

    def cell_start(self, p: int) -> float:
        """Left edge of cell p (1-based)."""
        return -0.5 * self.total_length + (p - 1) * self.period

    def _raw_segments(self) -> list[tuple[PlacedSegment, int]]:
        """Per-cell segments with perturbed heights; second item is the cell index."""
        offsets = self.perturbation.height_offsets
        barrier_cell = self.cell.barrier_indices
        local = self.cell.segment_offsets()
        out = []
        barrier = 0
        for p in range(1, self.n_cells + 1):
            origin = self.cell_start(p)
            for j, seg in enumerate(self.cell.segments):
                height = seg.height
                if j in barrier_cell:
                    if offsets is not None:
                        height = height + self.epsilon * offsets[barrier]
                    barrier += 1
                out.append((PlacedSegment(origin + local[j], seg.length, height), p))
        return out

    def barrier_spans(self) -> list[tuple[float, float]]:
        """(start, end) of every barrier, in the order height_offsets refers to them."""
        barrier_cell = set(self.cell.barrier_indices)
        spans = []
        nseg = len(self.cell.segments)
        for i, (seg, _) in enumerate(self._raw_segments()):
            if i % nseg in barrier_cell:
                spans.append((seg.start, seg.end))
        return spans

    def layout(self) -> Layout:
        half = 0.5 * self.total_length
        merged: list[PlacedSegment] = []
        for seg, _ in self._raw_segments():
            if merged and merged[-1].height == seg.height:
                last = merged[-1]
                merged[-1] = PlacedSegment(last.start, seg.end - last.start, last.height)
            else:
                merged.append(seg)
        # pin the outer edges so D = N*d holds exactly
        first, last = merged[0], merged[-1]
        merged[0] = PlacedSegment(-half, first.end + half, first.height)
        merged[-1] = PlacedSegment(merged[-1].start, half - merged[-1].start, last.height)

        deltas = []
        for p in range(1, self.n_cells + 1):
            center = self.cell_start(p) + 0.5 * self.period
            deltas.extend(DiracScatterer(center + d.position, d.strength) for d in self.cell.deltas)
        deltas.extend(DiracScatterer(d.position, self.epsilon * d.strength) for d in self.perturbation.deltas)
        return Layout(tuple(merged), merge_scatterers(deltas, -half, half), -half, half)

    def potential_at(self, x):
        """Piecewise-constant part of V0 + epsilon*V1 (scatterers excluded)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for seg in self.layout().segments:
            out = np.where((x >= seg.start) & (x <= seg.end), seg.height, out)
        return out if out.ndim else float(out)

    def slice_cell(self, p: int) -> UnitCell:
        """Recover cell p of the unperturbed replication in its local frame."""
        if not 1 <= p <= self.n_cells:
            raise ValidationError(f"cell index {p} outside 1..{self.n_cells}")
        raw = [seg for seg, q in self.unperturbed._raw_segments() if q == p]
        return UnitCell(tuple(Segment(s.length, s.height) for s in raw), self.cell.deltas)

    @property
    def is_mirror_symmetric(self) -> bool:
        """Mirror symmetry of the whole evaluated structure about x = 0."""
        lay = self.layout()
        segs = [Segment(s.length, s.height) for s in lay.segments]
        if not _segments_palindromic(segs, SYMMETRY_TOL):
            return False
        return _match_mirrored([d for d in lay.deltas if d.strength != 0.0], SYMMETRY_TOL)


def merge_scatterers(deltas: Iterable[DiracScatterer], left: float, right: float) -> tuple[DiracScatterer, ...]:
    """Sort, clip to the region and fuse scatterers sitting on the same point."""
    merged: list[DiracScatterer] = []
    for d in sorted(deltas, key=lambda s: s.position):
        if d.strength == 0.0:
            continue
        x = min(max(d.position, left), right)
        if merged and abs(merged[-1].position - x) <= POSITION_TOL:
            merged[-1] = DiracScatterer(merged[-1].position, merged[-1].strength + d.strength)
        else:
            merged.append(DiracScatterer(x, d.strength))
    return tuple(d for d in merged if d.strength != 0.0)


def build_periodic(cell: UnitCell, n_cells: int) -> StructureSpec:
    if n_cells < 1:
        raise ValidationError(f"n_cells must be >= 1, got {n_cells!r}")
    return StructureSpec(cell, int(n_cells))


def overlay_perturbation(base: StructureSpec, deltas: Sequence[DiracScatterer] = (),
                         height_offsets: Sequence[float] | None = None,
                         epsilon: float = 0.0) -> StructureSpec:
    """V0 + epsilon*V1; epsilon is stored so sweeps can rescale it."""
    if not base.perturbation.is_empty:
        raise ValidationError("base structure already carries a perturbation")
    return StructureSpec(base.cell, base.n_cells, Perturbation(tuple(deltas), height_offsets), float(epsilon))


def cell_centers(spec: StructureSpec) -> list[float]:
    """a_p = -D/2 + (p - 1/2) d for p = 1..N."""
    D, d = spec.total_length, spec.period
    return [-0.5 * D + (p - 0.5) * d for p in range(1, spec.n_cells + 1)]


def cell_edges(spec: StructureSpec) -> list[float]:
    """b_p = -D/2 + p d for p = 0..N."""
    D, d = spec.total_length, spec.period
    return [-0.5 * D + p * d for p in range(spec.n_cells + 1)]


def resolve_positions(spec: StructureSpec, kind: str, values: Sequence[float]) -> list[float]:
    """Turn a placement (centers:p..., edges:p..., abs:x...) into global positions."""
    if kind == "centers":
        centers = cell_centers(spec)
        out = []
        for p in values:
            if int(p) != p or not 1 <= p <= spec.n_cells:
                raise ValidationError(f"center index {p!r} outside 1..{spec.n_cells}")
            out.append(centers[int(p) - 1])
        return out
    if kind == "edges":
        edges = cell_edges(spec)
        out = []
        for p in values:
            if int(p) != p or not 0 <= p <= spec.n_cells:
                raise ValidationError(f"edge index {p!r} outside 0..{spec.n_cells}")
            out.append(edges[int(p)])
        return out
    if kind == "abs":
        half = 0.5 * spec.total_length
        for x in values:
            if abs(x) > half + POSITION_TOL:
                raise ValidationError(f"position {x!r} outside [-{half!r}, {half!r}]")
        return [float(x) for x in values]
    raise ValidationError(f"unknown placement kind {kind!r}; expected centers, edges or abs")


# JSON schema ----------------------------------------------------------------

_TOP_KEYS = {"d", "N", "cell", "perturbation"}
_CELL_KEYS = {"segments", "deltas"}
_SEGMENT_KEYS = {"len", "height"}
_DELTA_KEYS = {"pos", "c"}
_PERTURBATION_KEYS = {"epsilon", "deltas", "height_offsets"}


def _check_keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    for key in required:
        if key not in obj:
            raise ValidationError(f"missing key '{key}' in {where}")


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where} must be a number, got {value!r}")
    return float(value)


def structure_from_dict(data: dict) -> StructureSpec:
    """Parse the JSON structure schema; everything is rescaled to units of d."""
    _check_keys(data, _TOP_KEYS, "structure", required=("d", "N", "cell"))
    d = _number(data["d"], "d")
    if d <= 0:
        raise ValidationError(f"d must be > 0, got {d!r}")
    n_cells = data["N"]
    if isinstance(n_cells, bool) or not isinstance(n_cells, int) or n_cells < 1:
        raise ValidationError(f"N must be an integer >= 1, got {n_cells!r}")

    cell_data = data["cell"]
    _check_keys(cell_data, _CELL_KEYS, "cell", required=("segments",))
    if not isinstance(cell_data["segments"], list) or not cell_data["segments"]:
        raise ValidationError("cell.segments must be a non-empty list")
    segments = []
    for i, item in enumerate(cell_data["segments"]):
        where = f"cell.segments[{i}]"
        _check_keys(item, _SEGMENT_KEYS, where, required=("len",))
        segments.append(Segment(_number(item["len"], where + ".len") / d,
                                _number(item.get("height", 0.0), where + ".height") * d * d))
    total = math.fsum(s.length for s in segments)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"cell segment lengths sum to {total * d!r}, expected d = {d!r}")

    def parse_deltas(items, where):
        if not isinstance(items, list):
            raise ValidationError(f"{where} must be a list")
        out = []
        for i, item in enumerate(items):
            w = f"{where}[{i}]"
            _check_keys(item, _DELTA_KEYS, w, required=("pos", "c"))
            out.append(DiracScatterer(_number(item["pos"], w + ".pos") / d, _number(item["c"], w + ".c") * d))
        return out

    cell = UnitCell(tuple(segments), tuple(parse_deltas(cell_data.get("deltas", []), "cell.deltas")))
    spec = build_periodic(cell, n_cells)

    pert = data.get("perturbation")
    if pert is None:
        return spec
    _check_keys(pert, _PERTURBATION_KEYS, "perturbation")
    epsilon = _number(pert.get("epsilon", 0.0), "perturbation.epsilon")
    offsets = pert.get("height_offsets")
    if offsets is not None:
        if not isinstance(offsets, list):
            raise ValidationError("perturbation.height_offsets must be a list")
        offsets = [_number(h, f"perturbation.height_offsets[{i}]") * d * d for i, h in enumerate(offsets)]
    deltas = parse_deltas(pert.get("deltas", []), "perturbation.deltas")
    return overlay_perturbation(spec, deltas, offsets, epsilon)


def structure_to_dict(spec: StructureSpec) -> dict:
    data = {
        "d": 1.0,
        "N": spec.n_cells,
        "cell": {
            "segments": [{"len": s.length, "height": s.height} for s in spec.cell.segments],
            "deltas": [{"pos": x.position, "c": x.strength} for x in spec.cell.deltas],
        },
    }
    pert = spec.perturbation
    if not pert.is_empty or spec.epsilon:
        block = {"epsilon": spec.epsilon, "deltas": [{"pos": x.position, "c": x.strength} for x in pert.deltas]}
        if pert.height_offsets is not None:
            block["height_offsets"] = list(pert.height_offsets)
        data["perturbation"] = block
    return data
