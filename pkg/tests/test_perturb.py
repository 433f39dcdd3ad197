import cmath
import math

import numpy as np
import pytest

from conftest import N_CELLS, SYMMETRIC_OFFSETS, deltas, ptr_by_n
from errors import AccidentalLocationError, PeakLostError, SingularDesignError, SymmetryRequiredError, ValidationError
from field import LEFT, edge_normalized_amplitude, field_asymmetry, solve_field
from modes import reflectionless_modes
from perturb import (
    CENTERS,
    EDGES,
    DesignProblem,
    center_g,
    center_product,
    design_rows,
    design_strengths,
    edge_g,
    edge_product,
    epsilon_sweep,
    expected_partners,
    first_order_shift,
    fit_loglog_slope,
    pairing_check,
    ptr_field,
    ptr_window,
    shift_table,
)
from potential import Perturbation, Segment, StructureSpec, UnitCell, build_periodic, cell_centers, cell_edges
from transfer import find_ptrs, locate_peak, nth_band


def _design(spec, ptrs, positions, c1, n):
    return design_strengths(DesignProblem(spec, positions, {0: c1}, (n,), ptrs))


def _centers(spec, *ps):
    centers = cell_centers(spec)
    return [centers[p - 1] for p in ps]


def _edges(spec, *ps):
    edges = cell_edges(spec)
    return [edges[p] for p in ps]


@pytest.fixture(scope="module")
def single_ptr_design(barrier_spec, barrier_ptrs, two_barrier_positions):
    return _design(barrier_spec, barrier_ptrs, two_barrier_positions, 4.8, 7)


@pytest.fixture(scope="module")
def center_design(barrier_spec, barrier_ptrs):
    return _design(barrier_spec, barrier_ptrs, _centers(barrier_spec, 1, 3), 12.0, 1)


# First-order shifts ----------------------------------------------------------------

def test_empty_perturbation_does_not_shift(barrier_spec, barrier_ptrs):
    for shift in shift_table(barrier_spec, barrier_ptrs, Perturbation()):
        assert shift.k1 == 0
        assert shift.protected


def test_symmetric_offsets_protect_every_ptr(barrier_spec, barrier_ptrs, symmetric_offsets):
    table = shift_table(barrier_spec, barrier_ptrs, symmetric_offsets)
    assert len(table) == 7
    for shift in table:
        assert abs(shift.k1.imag) < 1e-10 * shift.k0
        assert shift.protected
        assert shift.k1.real != 0


def test_shift_is_phase_invariant(barrier_spec, barrier_ptrs, two_barrier_positions):
    x1, x2 = two_barrier_positions
    pert = Perturbation(deltas((x1, 4.8), (x2, -1.7)))
    ptr = ptr_by_n(barrier_ptrs, 3)
    reference = first_order_shift(barrier_spec, ptr, pert)
    for theta in (0.3, 1.9, -2.4):
        wave = solve_field(barrier_spec, ptr.k, LEFT, cmath.exp(1j * theta))
        rotated = first_order_shift(barrier_spec, ptr, pert, wave=wave)
        assert rotated.k1 == pytest.approx(reference.k1, rel=1e-12, abs=1e-14)


def test_shift_is_linear(barrier_spec, barrier_ptrs, two_barrier_positions):
    x1, x2 = two_barrier_positions
    a = Perturbation(deltas((x1, 2.0), (0.31, -1.0)))
    b = Perturbation(deltas((x2, 0.7)), SYMMETRIC_OFFSETS)
    for ptr in barrier_ptrs:
        total = first_order_shift(barrier_spec, ptr, a + b).k1
        parts = first_order_shift(barrier_spec, ptr, a).k1 + first_order_shift(barrier_spec, ptr, b).k1
        assert total == pytest.approx(parts, rel=1e-12, abs=1e-14)


def test_shift_needs_unperturbed_structure(barrier_spec, barrier_ptrs):
    perturbed = StructureSpec(barrier_spec.cell, N_CELLS, Perturbation(deltas((0.2, 1.0))), 0.1)
    with pytest.raises(ValidationError):
        first_order_shift(perturbed, barrier_ptrs[0], Perturbation(deltas((0.3, 1.0))))
    with pytest.raises(ValidationError):
        first_order_shift(barrier_spec, barrier_ptrs[0], Perturbation(deltas((9.0, 1.0))))


def test_single_ptr_protection(barrier_spec, barrier_ptrs, single_ptr_design):
    assert single_ptr_design.strengths[0] == 4.8
    table = shift_table(barrier_spec, barrier_ptrs, single_ptr_design.perturbation())
    for shift in table:
        if shift.n == 7:
            assert abs(shift.k1.imag) < 1e-10 * shift.k0
            assert shift.k1.real != 0
        else:
            assert abs(shift.k1.imag) > 1e-4 * shift.k0
            assert not shift.protected


def test_single_ptr_protection_survives_finite_epsilon(barrier_spec, barrier_ptrs, single_ptr_design):
    spec = StructureSpec(barrier_spec.cell, N_CELLS, single_ptr_design.perturbation(), 0.1)
    for ptr in barrier_ptrs:
        window = ptr_window(barrier_spec, ptr, barrier_ptrs)
        try:
            _, T = locate_peak(spec, ptr.k - window, ptr.k + window)
        except PeakLostError:
            assert ptr.n != 7
            continue
        if ptr.n == 7:
            assert T >= 0.99
        else:
            assert T < 0.99


def test_shift_matches_finite_differences(barrier_spec, barrier_ptrs):
    rng = np.random.default_rng(11)
    eps = 1e-4
    for _ in range(5):
        positions = rng.uniform(-3.9, 3.9, 3)
        strengths = rng.uniform(-5.0, 5.0, 3)
        pert = Perturbation(deltas(*zip(positions, strengths)))
        ptr = ptr_by_n(barrier_ptrs, int(rng.integers(1, 8)))
        k1 = first_order_shift(barrier_spec, ptr, pert).k1
        window = ptr_window(barrier_spec, ptr, barrier_ptrs)

        plus = StructureSpec(barrier_spec.cell, N_CELLS, pert, eps)
        minus = StructureSpec(barrier_spec.cell, N_CELLS, pert.scaled(-1.0), eps)
        k_plus, _ = locate_peak(plus, ptr.k - window, ptr.k + window)
        k_minus, _ = locate_peak(minus, ptr.k - window, ptr.k + window)
        m_plus = reflectionless_modes(plus, [ptr.k])[0].k
        m_minus = reflectionless_modes(minus, [ptr.k])[0].k

        fd = complex((k_plus - k_minus) / (2 * eps), (m_plus.imag - m_minus.imag) / (2 * eps))
        assert abs(fd - k1) < 1e-2 * abs(k1)
        assert abs((m_plus.real - m_minus.real) / (2 * eps) - k1.real) < 1e-2 * abs(k1)


# Design -----------------------------------------------------------------------------

def test_center_design_follows_g_ratio(center_design):
    g1, g3 = center_g(N_CELLS, 1, 1), center_g(N_CELLS, 1, 3)
    assert center_design.strengths[0] == 12.0
    assert center_design.strengths[1] == pytest.approx(-12.0 * g1 / g3, rel=1e-8)
    assert center_design.condition_number == pytest.approx(1.0)


def test_edge_design_residual(barrier_spec, barrier_ptrs):
    positions = _edges(barrier_spec, 1, 2)
    design = _design(barrier_spec, barrier_ptrs, positions, 1.8, 1)
    G = design_rows(barrier_spec, barrier_ptrs, (1,), positions)
    scale = np.max(np.abs(G[0] * np.array(design.strengths)))
    assert design.residuals[0] < 1e-12 * scale


def test_design_is_homogeneous(barrier_spec, barrier_ptrs, single_ptr_design):
    G = design_rows(barrier_spec, barrier_ptrs, single_ptr_design.targets, single_ptr_design.positions)
    for factor in (-3.0, 0.25, 40.0):
        scaled = single_ptr_design.scaled(factor)
        c = np.array(scaled.strengths)
        assert abs(G @ c)[0] < 1e-12 * np.max(np.abs(G * c))


def test_design_without_fixed_strength_is_singular(barrier_spec, barrier_ptrs):
    with pytest.raises(SingularDesignError):
        design_strengths(DesignProblem(barrier_spec, _centers(barrier_spec, 1), {}, (1,), barrier_ptrs))


def test_design_with_dependent_targets_is_singular(barrier_spec, barrier_ptrs):
    # n and N - n give proportional rows at cell centers
    problem = DesignProblem(barrier_spec, _centers(barrier_spec, 1, 3, 5), {0: 1.0}, (1, 7), barrier_ptrs)
    with pytest.raises(SingularDesignError) as info:
        design_strengths(problem)
    assert info.value.condition_number is None or info.value.condition_number > 1e12


def test_design_rejects_dead_position(barrier_spec, barrier_ptrs):
    problem = DesignProblem(barrier_spec, _edges(barrier_spec, 2, 1), {1: 1.0}, (2,), barrier_ptrs)
    with pytest.raises(AccidentalLocationError) as info:
        design_strengths(problem)
    assert info.value.index == 0


def test_design_count_mismatch(barrier_spec, barrier_ptrs):
    problem = DesignProblem(barrier_spec, _centers(barrier_spec, 1, 3, 5), {0: 1.0}, (1,), barrier_ptrs)
    with pytest.raises(ValidationError):
        design_strengths(problem)
    with pytest.raises(ValidationError):
        design_strengths(DesignProblem(barrier_spec, _centers(barrier_spec, 1, 3), {4: 1.0}, (1,), barrier_ptrs))


def test_design_result_dict(center_design):
    data = center_design.as_dict()
    assert set(data) == {"positions", "strengths", "targets", "residuals", "condition_number"}
    assert data["targets"] == [1]


# Closed-form products -----------------------------------------------------------------

def _field_products(spec, ptr, xs):
    wave = solve_field(spec, ptr.k, LEFT, edge_normalized_amplitude(ptr.k, spec.total_length))
    psi = np.asarray(wave.psi_at(np.asarray(xs)))
    return psi.real * psi.imag


def _check_products(cell):
    spec = build_periodic(cell, N_CELLS)
    ptrs = [p for p in find_ptrs(cell, N_CELLS, nth_band(cell, 1)) if p.kind == "bloch"]
    assert len(ptrs) == N_CELLS - 1
    centers, edges = cell_centers(spec), cell_edges(spec)
    for ptr in ptrs:
        numeric_c = _field_products(spec, ptr, centers)
        numeric_e = _field_products(spec, ptr, edges)
        analytic_c = [center_product(cell, N_CELLS, ptr.n, p, k=ptr.k) for p in range(1, N_CELLS + 1)]
        analytic_e = [edge_product(cell, N_CELLS, ptr.n, p, k=ptr.k) for p in range(0, N_CELLS + 1)]
        scale = max(np.max(np.abs(numeric_c)), np.max(np.abs(numeric_e)))
        np.testing.assert_allclose(analytic_c, numeric_c, rtol=0, atol=1e-10 * scale)
        np.testing.assert_allclose(analytic_e, numeric_e, rtol=0, atol=1e-10 * scale)


def test_products_match_field_for_barrier_cell(barrier_cell):
    _check_products(barrier_cell)


def test_products_match_field_for_random_cell(random_symmetric_cell):
    _check_products(random_symmetric_cell)


def test_product_finds_its_own_ptr(barrier_cell, barrier_ptrs):
    ptr = ptr_by_n(barrier_ptrs, 2)
    assert center_product(barrier_cell, N_CELLS, 2, 3) == pytest.approx(
        center_product(barrier_cell, N_CELLS, 2, 3, k=ptr.k), rel=1e-9)


def test_product_examples(barrier_cell, barrier_ptrs):
    k2 = ptr_by_n(barrier_ptrs, 2).k
    assert edge_g(8, 2, 2) == pytest.approx(0.0, abs=1e-15)
    assert edge_product(barrier_cell, 8, 2, 2, k=k2) == pytest.approx(0.0, abs=1e-14)
    assert center_g(8, 1, 1) == pytest.approx(math.sin(math.pi / 8) ** 2)


def test_products_need_symmetric_cell():
    cell = UnitCell((Segment(1 / 6, 27.0), Segment(5 / 6, 0.0)))
    with pytest.raises(SymmetryRequiredError):
        center_product(cell, 8, 1, 1, k=2.0)
    with pytest.raises(SymmetryRequiredError):
        edge_product(cell, 8, 1, 1, k=2.0)


def test_product_index_validation(barrier_cell):
    with pytest.raises(ValidationError):
        center_product(barrier_cell, 8, 1, 0, k=2.0)
    with pytest.raises(ValidationError):
        edge_product(barrier_cell, 8, 1, 9, k=2.0)
    with pytest.raises(ValidationError):
        center_product(barrier_cell, 8, 8, 1, k=2.0)


@pytest.mark.parametrize("n_cells", range(2, 17))
def test_center_duality(n_cells):
    for n in range(1, n_cells):
        for p in range(1, n_cells + 1):
            assert center_g(n_cells, n_cells - n, p) == pytest.approx(center_g(n_cells, n, p), abs=1e-12)


@pytest.mark.parametrize("n_cells", range(2, 17))
def test_edge_duality(n_cells):
    for n in range(1, n_cells):
        for p in range(0, n_cells + 1):
            g = edge_g(n_cells, n, p)
            assert edge_g(n_cells, n_cells - n, p) == pytest.approx(-g, abs=1e-12)
            if n_cells % 2 == 0:
                sign = (-1) ** p
                assert edge_g(n_cells, n_cells // 2 + n, p) == pytest.approx(sign * g, abs=1e-12)
                assert edge_g(n_cells, n_cells // 2 - n, p) == pytest.approx(-sign * g, abs=1e-12)


# Pairing ------------------------------------------------------------------------------

@pytest.mark.parametrize("n, expected", [
    (1, {1, 7}), (3, {3, 5}), (4, {4}),
])
def test_expected_partners_centers(n, expected):
    assert expected_partners(8, n, CENTERS) == frozenset(expected)


def test_expected_partners_edges():
    assert expected_partners(8, 1, EDGES, [1, 2]) == frozenset({1, 7})
    assert expected_partners(8, 1, EDGES, [1, 3]) == frozenset({1, 3, 5, 7})
    assert expected_partners(8, 2, EDGES, [2, 4]) == frozenset({2, 6})
    assert expected_partners(7, 1, EDGES, [1, 3]) == frozenset({1, 6})


@pytest.mark.parametrize("n, c1", [(1, 12.0), (2, 4.5), (3, 2.4)])
def test_center_pairing(barrier_spec, barrier_ptrs, n, c1):
    design = _design(barrier_spec, barrier_ptrs, _centers(barrier_spec, 1, 3), c1, n)
    report = pairing_check(barrier_spec, CENTERS, design, n, barrier_ptrs)
    assert report.expected == frozenset({n, N_CELLS - n})
    assert report.holds
    by_n = {s.n: s for s in report.table}
    assert abs(by_n[N_CELLS - n].k1.imag) < 1e-10 * by_n[N_CELLS - n].k0


@pytest.mark.parametrize("n, partner", [(1, 7), (3, 5)])
def test_edge_pairing(barrier_spec, barrier_ptrs, n, partner):
    design = _design(barrier_spec, barrier_ptrs, _edges(barrier_spec, 1, 2), 1.8, n)
    report = pairing_check(barrier_spec, EDGES, design, n, barrier_ptrs)
    assert report.expected == frozenset({n, partner})
    assert report.holds


def test_same_parity_edges_protect_a_multiplet(barrier_spec, barrier_ptrs):
    design = _design(barrier_spec, barrier_ptrs, _edges(barrier_spec, 1, 3), 1.5, 1)
    report = pairing_check(barrier_spec, EDGES, design, 1, barrier_ptrs)
    assert report.expected == frozenset({1, 3, 5, 7})
    assert report.holds
    for shift in report.table:
        if shift.n in (1, 3, 5, 7):
            assert abs(shift.k1.imag) < 1e-10 * shift.k0


def test_pairing_validation(barrier_spec, barrier_ptrs, center_design, single_ptr_design):
    with pytest.raises(ValidationError):
        pairing_check(barrier_spec, "corners", center_design, 1, barrier_ptrs)
    with pytest.raises(ValidationError):
        pairing_check(barrier_spec, EDGES, single_ptr_design, 7, barrier_ptrs)


# Sweeps -------------------------------------------------------------------------------

def test_fit_loglog_slope():
    eps = np.geomspace(1e-3, 1e-1, 20)
    assert fit_loglog_slope(eps, 3.0 * eps ** 4) == pytest.approx(4.0)
    assert fit_loglog_slope(eps, 0.5 * eps ** 2) == pytest.approx(2.0)
    assert math.isnan(fit_loglog_slope(eps, np.zeros_like(eps)))


def test_symmetric_sweep_keeps_unit_transmission(barrier_spec, barrier_ptrs, symmetric_offsets):
    ptr = ptr_by_n(barrier_ptrs, 1)
    result = epsilon_sweep(barrier_spec, symmetric_offsets, ptr, np.geomspace(1e-3, 0.1, 15), barrier_ptrs)
    assert not result.truncated
    assert len(result.epsilons) == 15
    assert max(result.one_minus_T) < 1e-9
    diffs = np.abs(np.diff((ptr.k,) + result.peak_k))
    assert np.all(diffs < nth_band(barrier_spec.cell, 1).width / 10)


def test_protected_ptr_degrades_quartically(barrier_spec, barrier_ptrs, center_design):
    grid = np.geomspace(0.01, 0.1, 12)
    pert = center_design.perturbation()
    protected = epsilon_sweep(barrier_spec, pert, ptr_by_n(barrier_ptrs, 1), grid, barrier_ptrs)
    unprotected = epsilon_sweep(barrier_spec, pert, ptr_by_n(barrier_ptrs, 2), grid, barrier_ptrs)
    assert protected.fitted_slope == pytest.approx(4.0, abs=0.3)
    assert unprotected.fitted_slope == pytest.approx(2.0, abs=0.2)
    assert list(protected.rows())[0][0] == grid[0]


def test_strong_center_design_field(barrier_spec, barrier_ptrs, center_design):
    ptr = ptr_by_n(barrier_ptrs, 1)
    spec = StructureSpec(barrier_spec.cell, N_CELLS, center_design.perturbation(), 0.225)
    window = ptr_window(barrier_spec, ptr, barrier_ptrs)
    k, T = locate_peak(spec, ptr.k - window, ptr.k + window)
    assert k == pytest.approx(1.86696, abs=1e-3)
    assert 0.85 <= T <= 0.95
    left = solve_field(spec, k, LEFT)
    right = solve_field(spec, k, "right")
    assert field_asymmetry(left, right) > 0.05


def test_sweep_validation(barrier_spec, barrier_ptrs, symmetric_offsets):
    ptr = barrier_ptrs[0]
    with pytest.raises(ValidationError):
        epsilon_sweep(barrier_spec, symmetric_offsets, ptr, [0.1, 0.05], barrier_ptrs)
    with pytest.raises(ValidationError):
        epsilon_sweep(barrier_spec, symmetric_offsets, ptr, [0.0, 0.05], barrier_ptrs)
    perturbed = StructureSpec(barrier_spec.cell, N_CELLS, symmetric_offsets, 0.1)
    with pytest.raises(ValidationError):
        epsilon_sweep(perturbed, symmetric_offsets, ptr, [0.01], barrier_ptrs)


def test_ptr_field_uses_symmetrizing_phase(barrier_spec, barrier_ptrs):
    for ptr in barrier_ptrs:
        wave = ptr_field(barrier_spec, ptr)
        expected = 1.0 if ptr.n % 2 == 0 else -1j
        assert wave.psi_left == pytest.approx(expected, abs=1e-9)
