"""Shared builders for the test-suite."""

import numpy as np


def separated_points(rng, n, dim, spacing=1.5, jitter=0.1):
    """``n`` distinct lattice points with unit-scale spacing plus a small jitter.

    Minimum separation is at least ``spacing - 2 * jitter``, which keeps
    squared-exponential kernel matrices with unit lengthscale well conditioned.
    """
    side = int(np.ceil(n ** (1.0 / dim))) + 1
    cells = np.stack(np.meshgrid(*[np.arange(side)] * dim, indexing="ij"), -1).reshape(-1, dim)
    pick = rng.choice(len(cells), n, replace=False)
    return spacing * cells[pick] + rng.uniform(-jitter, jitter, (n, dim))


def smooth_values(x, rng):
    a = rng.normal(size=x.shape[1])
    return np.sin(x @ a) + 0.3 * (x**2).sum(1) ** 0.5 + rng.normal()


def probe_grid(x, n=100, seed=0):
    rng = np.random.default_rng(seed)
    lo, hi = x.min(0) - 1.0, x.max(0) + 1.0
    return lo + (hi - lo) * rng.random((n, x.shape[1]))


def se_kernel(a, b, sv, ls):
    d = (a[:, None, :] - b[None, :, :]) / np.asarray(ls)
    return sv * np.exp(-0.5 * (d**2).sum(-1))


def brute_force_criterion(x, y, sv, ls, jitter, prior_mean, theta_star, nodes, weights,
                          alpha=1.96, bins=100, metric="log_l1"):
    """Criterion by full refits with dense solves and a hand-rolled histogram."""
    K = se_kernel(x, x, sv, ls) + jitter * np.eye(len(x))
    k = se_kernel(x, nodes, sv, ls)
    mean = prior_mean + k.T @ np.linalg.solve(K, y - prior_mean)
    xa = np.vstack([x, np.atleast_2d(theta_star)])
    Ka = se_kernel(xa, xa, sv, ls) + jitter * np.eye(len(xa))
    ka = se_kernel(xa, nodes, sv, ls)
    var = np.maximum(sv - np.sum(ka * np.linalg.solve(Ka, ka), 0), 0)
    up, lo = mean + alpha * np.sqrt(var), mean - alpha * np.sqrt(var)
    a, b = min(up.min(), lo.min()), max(up.max(), lo.max())
    pad = 0.01 * (b - a)
    edges = np.linspace(a - pad, b + pad, bins + 1)
    total = weights.sum()

    def pdf(v):
        idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)
        return np.bincount(idx, weights, bins) / np.diff(edges) / total

    f, g = pdf(up), pdf(lo)
    w = np.diff(edges)
    if metric == "l2":
        return 0.5 * np.sum((f - g) ** 2 * w)
    floor = 1e-12 * max(f.max(), g.max())
    ok = (f > floor) & (g > floor)
    return 0.5 * np.sum(np.abs(np.log(f[ok]) - np.log(g[ok])) * w[ok])
