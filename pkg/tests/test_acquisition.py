import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from _support import brute_force_criterion
from extremepdf import density as dens
from extremepdf.acquisition import (
    CriterionConfig,
    CriterionEvaluator,
    Metric,
    asymptotic_q,
    asymptotic_q_from_fields,
    corollary_bound,
    corollary_bound_from_fields,
    criterion,
)
from extremepdf.errors import NotMonotone
from extremepdf.gp import Dataset, KernelHyperparams, fit, predict
from extremepdf.inputs import EmpiricalGrid, GaussianDiagonal, QuadratureGrid, quadrature_grid


@pytest.fixture(scope="module")
def toy():
    x = np.array([[-2.0], [0.3], [1.8]])
    y = np.array([-1.0, 0.2, 2.5])
    gp = fit(Dataset(x, y), KernelHyperparams(1.2, (0.9,)))
    grid = quadrature_grid(GaussianDiagonal([1.0]), 400)
    return gp, grid


@pytest.mark.parametrize("metric", ["log_l1", "l2"])
def test_matches_full_refit_pipeline(toy, metric):
    gp, grid = toy
    cfg = CriterionConfig(grid, metric=metric)
    hp = gp.hyperparams
    for t in (-3.1, -0.7, 0.9, 2.2, 3.6):
        got = criterion([t], gp, cfg)
        ref = brute_force_criterion(gp.dataset.thetas, gp.dataset.values, hp.signal_variance,
                                    hp.lengthscales, hp.jitter, gp.prior_mean, [t], grid.nodes,
                                    grid.weights, metric=metric)
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_duplicate_returns_baseline(toy):
    gp, grid = toy
    ev = CriterionEvaluator(gp, CriterionConfig(grid))
    plus, minus = dens.bound_pdfs(gp, grid)
    assert ev(gp.dataset.thetas[1]) == ev.baseline == dens.log_l1_distance(plus, minus)


def test_evaluation_does_not_touch_the_surrogate(toy):
    gp, grid = toy
    before = predict(gp, grid.nodes)
    L = gp.chol_factor.copy()
    criterion([0.5], gp, CriterionConfig(grid))
    after = predict(gp, grid.nodes)
    assert np.array_equal(before[0], after[0]) and np.array_equal(before[1], after[1])
    assert np.array_equal(L, gp.chol_factor) and gp.n == 3


def test_invariant_to_node_order(toy):
    gp, grid = toy
    perm = np.random.default_rng(0).permutation(len(grid))
    shuffled = QuadratureGrid(grid.nodes[perm], grid.weights[perm], grid.resolution)
    a = criterion([1.1], gp, CriterionConfig(grid))
    b = criterion([1.1], gp, CriterionConfig(shuffled))
    assert a == pytest.approx(b, rel=1e-12)


def test_updated_variance_vanishes_at_candidate(toy):
    gp, _ = toy
    grid = QuadratureGrid(np.array([[0.9], [2.0]]), np.array([0.5, 0.5]), (2,))
    ev = CriterionEvaluator(gp, CriterionConfig(grid, bins=10))
    var = ev.updated_variance([0.9])
    assert var[0] <= 1e-10 * gp.hyperparams.signal_variance
    assert var[1] <= ev.var[1]


def test_denser_data_lowers_best_criterion():
    grid = quadrature_grid(GaussianDiagonal([1.0]), 1000)
    probes = np.linspace(-3.9, 3.9, 41)
    best = []
    for n in (20, 40):
        x = np.linspace(-4, 4, n)[:, None]
        gp = fit(Dataset(x, np.tanh(x[:, 0]) + 0.2 * x[:, 0] ** 3), KernelHyperparams(20.0, (0.3,)))
        ev = CriterionEvaluator(gp, CriterionConfig(grid))
        best.append(min(ev([p]) for p in probes))
    assert best[1] < best[0]


def test_config_validation(toy):
    _, grid = toy
    with pytest.raises(ValueError):
        CriterionConfig(grid, alpha=0)
    with pytest.raises(ValueError):
        CriterionConfig(grid, bins=5)
    assert CriterionConfig(grid, metric="l2").metric is Metric.L2


# asymptotic diagnostics -------------------------------------------------------

def test_asymptotic_q_zero_without_spread():
    grid = quadrature_grid(GaussianDiagonal([1.0]), 500)
    x = grid.nodes[:, 0]
    assert asymptotic_q_from_fields(x, np.zeros_like(x), grid.weights) == 0.0


def test_asymptotic_q_constant_spread_matches_quadrature():
    grid = quadrature_grid(GaussianDiagonal([1.0]), 20000)
    x = grid.nodes[:, 0]
    c = 0.05
    # E[c 1{T = s}] = c f(s), so the integrand is c |f'(s)| / f(s) = c |s| on [-4, 4]
    oracle = quad(lambda s: c * abs(-s * norm.pdf(s)) / norm.pdf(s), -4, 4, points=[0])[0]
    got = asymptotic_q_from_fields(x, np.full_like(x, c), grid.weights)
    assert got == pytest.approx(oracle, rel=0.02)


def test_corollary_bound_cases():
    nodes = np.linspace(0, 1, 2001)
    flat = np.zeros_like(nodes)
    assert corollary_bound_from_fields(nodes, nodes, flat, flat) == 0.0
    # constant spread, identity map, uniform input: every term vanishes
    assert corollary_bound_from_fields(nodes, nodes, np.full_like(nodes, 0.3), flat) <= 1e-10
    with pytest.raises(NotMonotone):
        corollary_bound_from_fields(nodes, -nodes, flat, flat)


def test_corollary_bound_uniform_density_with_empirical_grid():
    x = np.array([[-1.0], [-0.2], [0.5], [1.0]])
    gp = fit(Dataset(x, 2 * x[:, 0]), KernelHyperparams(1.0, (2.0,)))
    dist = EmpiricalGrid((np.linspace(-1, 1, 3),), np.ones(3))
    assert np.isfinite(corollary_bound(gp, dist, 1.0, 2001))


def _monotone_instance(map_fn, seed, n=30, nodes=20000):
    from scipy.optimize import brentq

    rng = np.random.default_rng(seed)
    x = np.r_[-4.0, np.sort(rng.uniform(-4, 4, n - 2)), 4.0][:, None]
    y = map_fn(x[:, 0])
    dist = GaussianDiagonal([1.0])
    grid = quadrature_grid(dist, nodes)
    span = np.ptp(map_fn(grid.nodes[:, 0]))

    def excess(log_ls):
        gp = fit(Dataset(x, y), KernelHyperparams(np.var(y), (np.exp(log_ls),)))
        return 1.96 * np.sqrt(predict(gp, grid.nodes)[1].max()) - 0.005 * span

    ls = np.exp(brentq(excess, np.log(0.02), np.log(2.0), xtol=1e-3))
    return fit(Dataset(x, y), KernelHyperparams(np.var(y), (ls,))), dist, grid


def test_asymptotic_q_dominates_corollary_bound():
    gp, dist, grid = _monotone_instance(lambda t: t**3 + t, 0)
    cfg = CriterionConfig(grid, bins=1000)
    assert asymptotic_q(gp, cfg) >= corollary_bound(gp, dist, cfg.alpha) - 1e-6


def test_asymptotic_q_rejects_three_dimensions():
    gp = fit(Dataset(np.eye(3), [0, 1, 2]), KernelHyperparams(1.0, (1.0,) * 3))
    grid = quadrature_grid(GaussianDiagonal([1.0] * 3), 4)
    with pytest.raises(ValueError):
        asymptotic_q(gp, CriterionConfig(grid))
