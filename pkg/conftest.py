import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from potential import DiracScatterer, Perturbation, Segment, UnitCell, build_periodic  # noqa: E402
from transfer import find_ptrs, nth_band  # noqa: E402

N_CELLS = 8
BARRIER_WIDTH = 1.0 / 6.0
BARRIER_HEIGHT = 27.0
SYMMETRIC_OFFSETS = (-27.0, 0.0, -72.0, 27.0, 27.0, -72.0, 0.0, -27.0)


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    path = tmp_path / "solver.ini"
    monkeypatch.setenv("PTR_DESIGN_SETTINGS", str(path))
    return path


@pytest.fixture(scope="session")
def barrier_cell():
    return UnitCell.rectangular_barrier(BARRIER_WIDTH, BARRIER_HEIGHT)


@pytest.fixture(scope="session")
def barrier_spec(barrier_cell):
    return build_periodic(barrier_cell, N_CELLS)


@pytest.fixture(scope="session")
def first_band(barrier_cell):
    return nth_band(barrier_cell, 1)


@pytest.fixture(scope="session")
def barrier_ptrs(barrier_cell, first_band):
    return find_ptrs(barrier_cell, N_CELLS, first_band)


@pytest.fixture(scope="session")
def symmetric_offsets():
    return Perturbation(height_offsets=SYMMETRIC_OFFSETS)


@pytest.fixture(scope="session")
def two_barrier_positions(barrier_spec):
    """Scatterers 0.1 s and 0.95 s into the first and second barriers."""
    spans = barrier_spec.barrier_spans()
    return spans[0][0] + 0.1 * BARRIER_WIDTH, spans[1][0] + 0.95 * BARRIER_WIDTH


@pytest.fixture(scope="session")
def random_symmetric_cell():
    rng = np.random.default_rng(7)
    outer = rng.uniform(0.2, 0.35)
    h_outer = rng.uniform(0.0, 5.0)
    h_inner = rng.uniform(10.0, 40.0)
    return UnitCell((Segment(outer, h_outer), Segment(1.0 - 2 * outer, h_inner), Segment(outer, h_outer)))


def ptr_by_n(ptrs, n):
    return next(p for p in ptrs if p.n == n and p.kind == "bloch")


def deltas(*pairs):
    return tuple(DiracScatterer(x, c) for x, c in pairs)
