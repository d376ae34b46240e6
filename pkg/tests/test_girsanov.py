import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birkhoff_girsanov.banach import Space
from birkhoff_girsanov.conditioning import BinnedFiltration, Filtration, martingale_test
from birkhoff_girsanov.girsanov import (AssumptionViolation, EstimationError, GirsanovSetup,
                                        PathEnsemble, build_Ncirc, change_measure,
                                        check_distribution_preservation, density_ratio_estimate,
                                        girsanov_verify, phi_functional, phi_rows, prop41_setup,
                                        scalar_g, scalar_setup, simulate_bm, simulate_product,
                                        uniform_grid, vector_density)
from birkhoff_girsanov.measure import DiscreteMeasureSpace, VectorMeasure


@pytest.fixture(scope="module")
def ens():
    return simulate_bm(50_000, uniform_grid(16), seed=11)


def test_paths_start_at_zero_and_are_deterministic():
    a = simulate_bm(1000, uniform_grid(8), seed=5)
    b = simulate_bm(1000, uniform_grid(8), seed=5, threads=3)
    assert np.all(a.values[:, 0] == 0.0)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, simulate_bm(1000, uniform_grid(8), seed=6).values)


def test_terminal_variance():
    M = 100_000
    e = simulate_bm(M, uniform_grid(4), seed=1)
    assert abs(e.values[:, -1].var() - 1.0) <= 4 * math.sqrt(2 / M)


def test_increment_law_on_nonuniform_grid():
    grid = np.array([0.0, 0.1, 0.5, 2.0])
    e = simulate_bm(200_000, grid, seed=2)
    inc = np.diff(e.values, axis=1)
    np.testing.assert_allclose(inc.var(axis=0), np.diff(grid), rtol=0.02)
    assert np.abs(np.corrcoef(inc.T) - np.eye(3)).max() < 0.01


def test_invalid_grid():
    with pytest.raises(ValueError):
        simulate_bm(10, [0.0, 0.5, 0.4], seed=1)
    with pytest.raises(ValueError):
        simulate_bm(10, [0.1, 0.5], seed=1)
    with pytest.raises(ValueError):
        simulate_bm(0, [0.0, 1.0], seed=1)


def test_closed_form_ratios():
    times = uniform_grid(4)
    assert scalar_g(1.0, times)(4, np.array([0.0]))[0] == pytest.approx(math.exp(0.5))
    ens = simulate_bm(10, times, seed=0)
    st_ = prop41_setup(ens)
    assert st_.g(4, np.array([0.0]))[0] == pytest.approx(math.exp(-0.5))
    # y_t = g_t(w_t + t) = exp(-3t/2 - w_t)
    assert st_.g(4, np.array([0.0 + 1.0]))[0] == pytest.approx(math.exp(-1.5))


def test_ratio_without_shift_is_one(ens):
    est = density_ratio_estimate(ens.values[:, 8], 0.0, np.linspace(-1.5, 1.5, 9),
                                 ens.probability())
    np.testing.assert_allclose(est.g_hat[est.valid], 1.0)


def test_ratio_matches_scalar_closed_form(ens):
    k = 16
    est = density_ratio_estimate(ens.values[:, k], 1.0, np.linspace(-1.0, 1.0, 5),
                                 ens.probability())
    c = est.centers[est.valid]
    ref = np.exp(-c + 0.5)
    # bins are wide, so compare in the log domain with room for the bin average
    assert np.abs(np.log(est.g_hat[est.valid] / ref)).max() < 0.1


def test_ratio_estimation_failure(ens):
    with pytest.raises(EstimationError):
        density_ratio_estimate(ens.values[:, 8], 0.0, [10.0, 11.0], ens.probability())


def test_vector_density_total(ens):
    N = build_Ncirc(PathEnsemble(ens.values[:2000], ens.grid, ens.seed))
    x = ens.values[:2000, 8]
    edges = np.linspace(-1.0, 1.0, 11)
    est = vector_density(N, x, edges)
    inside = np.flatnonzero((x >= -1.0) & (x <= 1.0))
    np.testing.assert_allclose(est.total(), N(inside).coords, rtol=1e-12)


def test_change_measure_examples(rng):
    sp = Space.finite(2)
    N = VectorMeasure.tabulated(DiscreteMeasureSpace.uniform(5), sp, rng.normal(size=(5, 2)))
    np.testing.assert_allclose(change_measure(N, np.ones(5)).increments, N.increments)
    Q2 = change_measure(N, np.full(5, 2.0))
    np.testing.assert_allclose(Q2([0, 3]).coords, 2 * N([0, 3]).coords)
    with pytest.raises(AssumptionViolation):
        change_measure(N, np.array([1.0, 1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(AssumptionViolation):
        change_measure(N, np.array([1.0, np.inf, 1.0, 1.0, 1.0]))


def test_change_measure_equivalence():
    inc = np.array([[1.0], [0.0], [2.0]])
    N = VectorMeasure.tabulated(DiscreteMeasureSpace.uniform(3), Space.real(), inc)
    Q = change_measure(N, np.array([3.0, 0.0, 0.5]))  # zero allowed on the null atom
    assert (Q.atom_norms() == 0).tolist() == (N.atom_norms() == 0).tolist()


def test_lognormal_density_has_unit_mass():
    M = 200_000
    e = simulate_bm(M, uniform_grid(4), seed=9)
    y = np.exp(-e.values[:, -1] - 0.5)
    Q = change_measure(e.probability(), y)
    se = math.sqrt(math.e - 1) / math.sqrt(M)
    assert abs(Q(np.arange(M)).coords[0] - 1.0) <= 4 * se


def _trivial_setup(ens):
    return GirsanovSetup(ens.process(), lambda t: 0.0, lambda k, x: np.ones_like(x),
                         ens.probability())


def test_distribution_preservation(ens):
    assert check_distribution_preservation(_trivial_setup(ens), 8).passed
    assert check_distribution_preservation(scalar_setup(ens, 1.0), 16).passed
    wrong = GirsanovSetup(ens.process(), lambda t: t, lambda k, x: np.ones_like(x),
                          ens.probability())
    assert not check_distribution_preservation(wrong, 16).passed


def test_girsanov_verify_trivial_and_scalar(ens):
    F = BinnedFiltration(ens.process())
    assert girsanov_verify(_trivial_setup(ens), F).passed
    rep = girsanov_verify(scalar_setup(ens, 1.0), F)
    assert [s.name for s in rep.stages] == ["y_martingale", "ztilde_y_martingale", "ztilde_under_Q"]
    assert rep.passed


def test_failed_assumption_is_labelled(ens):
    # y not a martingale: g without the compensating factor
    bad = GirsanovSetup(ens.process(), lambda t: t, lambda k, x: np.exp(-x), ens.probability())
    rep = girsanov_verify(bad, BinnedFiltration(ens.process()))
    assert "y_martingale" in rep.failed


def test_tower_step_under_martingale_density(ens):
    # sum_E z_s y_T dN = sum_E z_s y_s dN on cells of F_s
    st_ = scalar_setup(ens, 1.0)
    s = 8
    zs = st_.z_tilde(s)
    proc = st_.y.map(lambda k, y: zs * y)
    P = BinnedFiltration(st_.z).partition(s)
    Fs = Filtration([s, 16], [P, P])
    assert martingale_test(proc, st_.N, Fs).passed


def test_phi_functional_examples():
    grid = uniform_grid(4)
    w = np.zeros(5)
    assert phi_functional(1.0, 0.5, w, grid) == pytest.approx(math.exp(-0.5))
    r = np.random.default_rng(0).normal(size=5)
    assert phi_functional(0.5, 0.5, r, grid) == pytest.approx(math.exp(-r[2] - 0.25))
    with pytest.raises(ValueError):
        phi_functional(0.3, 0.5, w, grid)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8), st.integers(0, 2**32 - 1))
def test_phi_branches(i, k, seed):
    grid = uniform_grid(8)
    w = np.random.default_rng(seed).normal(size=9)
    tau, t = grid[i], grid[k]
    expect = math.exp(-w[i] - tau / 2) if t <= tau else math.exp(-w[k] - t / 2)
    assert phi_functional(tau, t, w, grid) == pytest.approx(expect, rel=1e-12)


def test_phi_rows_match_functional():
    e = simulate_bm(5, uniform_grid(4), seed=1)
    rows = phi_rows(e, 2)
    for m in range(5):
        for j in range(5):
            assert rows[m, j] == pytest.approx(phi_functional(e.grid[j], e.grid[2], e.values[m], e.grid))


def test_ncirc_terminal_increments_constant_in_tau():
    e = simulate_bm(50, uniform_grid(8), seed=1)
    N = build_Ncirc(e)
    inc = N.increments
    np.testing.assert_allclose(inc, inc[:, :1] * np.ones((1, 9)), rtol=1e-14)
    np.testing.assert_allclose(inc[:, 0], np.exp(-e.values[:, -1] - 0.5) / 50, rtol=1e-14)


def test_conditional_identity_small(ens):
    times = ens.grid
    proc = ens.process().map(lambda k, x: np.exp(-x - 0.5 * times[k]))
    r = martingale_test(proc, ens.probability(), BinnedFiltration(ens.process()), pairs="terminal")
    assert r.passed


def test_product_ensemble_slots_are_probabilities():
    pe = simulate_product(4, 300, uniform_grid(4), seed=2)
    N = pe.conditional_measure()
    np.testing.assert_allclose(N.integrate().coords, 1.0)
    z0 = pe.process()(0)
    np.testing.assert_allclose(z0, pe.w_T_atoms)
