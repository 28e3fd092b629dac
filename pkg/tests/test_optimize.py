from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extremepdf.errors import ObjectiveFailure
from extremepdf.optimize import PsoConfig, pso_minimize


def sphere(x):
    return float(np.sum(x**2))


def test_sphere_minimum():
    x, f = pso_minimize(sphere, PsoConfig(bounds=[(-5, 5), (-5, 5)]))
    assert np.linalg.norm(x) < 1e-3
    assert f == pytest.approx(sphere(x))


def test_multimodal_matches_grid_scan():
    fn = lambda x: float(np.sin(5 * x[0]) + 0.5 * x[0] ** 2)  # noqa: E731
    grid = np.linspace(-3, 3, 10_001)
    best = np.min(np.sin(5 * grid) + 0.5 * grid**2)
    _, f = pso_minimize(fn, PsoConfig(bounds=[(-3, 3)], seed=3))
    assert f <= best + 1e-3


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_iterates_stay_in_bounds_and_incumbent_never_rises(seed, dim):
    bounds = np.c_[-np.arange(1, dim + 1), np.ones(dim) * 0.5]
    trace = []
    pso_minimize(lambda x: float(np.sum(np.cos(3 * x) + x)), PsoConfig(10, 15, seed=seed, bounds=bounds),
                 trace=trace)
    assert len(trace) == 15
    for pos, _ in trace:
        assert np.all(pos >= bounds[:, 0]) and np.all(pos <= bounds[:, 1])
    best = [v for _, v in trace]
    assert all(b <= a for a, b in zip(best, best[1:]))


def test_deterministic_and_thread_independent():
    cfg = PsoConfig(20, 20, seed=11, bounds=[(-2, 2)] * 3)
    fn = lambda x: float(np.sum((x - 0.3) ** 2) + np.sin(7 * x).sum())  # noqa: E731
    a = pso_minimize(fn, cfg)
    b = pso_minimize(fn, cfg)
    with ThreadPoolExecutor(4) as ex:
        c = pso_minimize(fn, cfg, executor=ex)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[0], c[0]) and a[1] == b[1] == c[1]
    d = pso_minimize(fn, PsoConfig(20, 20, seed=12, bounds=[(-2, 2)] * 3))
    assert not np.array_equal(a[0], d[0])


def test_objective_failures():
    def flaky(x):
        if x[0] > -0.5:
            raise RuntimeError("boom")
        return float(x[0])

    with pytest.raises(ObjectiveFailure):
        pso_minimize(flaky, PsoConfig(20, 5, bounds=[(-1, 1)]))

    def nan_sometimes(x):
        return np.nan if x[0] > 0.8 else float(x[0] ** 2)

    x, f = pso_minimize(nan_sometimes, PsoConfig(20, 30, bounds=[(-1, 1)]))
    assert np.isfinite(f) and abs(x[0]) < 1e-2


@pytest.mark.parametrize("kw", [
    {"swarm_size": 1}, {"iterations": 0}, {"inertia": 0.0}, {"social": 3.0}, {"bounds": [(1, 0)]},
    {"bounds": [(0, np.inf)]},
])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        PsoConfig(**kw)


def test_requires_bounds():
    with pytest.raises(ValueError):
        pso_minimize(sphere, PsoConfig())
