"""Next-point criterion and its large-sample diagnostics.

The criterion at a candidate ``theta*`` imagines that the surrogate is
observed there with its own mean prediction. The mean field is unchanged by
such an observation, while the variance drops and vanishes at ``theta*``.
The distance between the pdfs of the two confidence-bound maps is then the
value to minimize.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import density as dens
from .errors import DuplicatePoint, NotMonotone
from .gp import GpPosterior, append_point, kernel, posterior_mean, predict, whiten
from .inputs import QuadratureGrid, quadrature_grid


class Metric(str, enum.Enum):
    LOG_L1 = "log_l1"
    L2 = "l2"

    def distance(self, f, g) -> float:
        if self is Metric.LOG_L1:
            return dens.log_l1_distance(f, g)
        return dens.l2_distance(f, g)


@dataclass(frozen=True, eq=False)
class CriterionConfig:
    grid: QuadratureGrid
    alpha: float = 1.96
    bins: int = dens.DEFAULT_BINS
    metric: Metric = Metric.LOG_L1
    transform: Callable | None = None
    smooth: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.bins < 10:
            raise ValueError("bins must be >= 10")
        object.__setattr__(self, "metric", Metric(self.metric))


class CriterionEvaluator:
    """Criterion for one surrogate, with the grid-dependent work done once.

    ``whiten(gp, nodes)`` is cached, so each call costs one bordered Cholesky
    step plus O(n N) for the variance update on the N grid nodes. Calls do
    not mutate shared state and may run concurrently.
    """

    def __init__(self, gp: GpPosterior, cfg: CriterionConfig):
        self.gp = gp
        self.cfg = cfg
        nodes = cfg.grid.nodes
        self.mean, self.var = predict(gp, nodes)
        self.V = whiten(gp, nodes)
        self.weights = np.asarray(cfg.grid.weights)
        self._baseline = None

    @property
    def baseline(self) -> float:
        """Distance between the bound pdfs of the unmodified surrogate."""
        if self._baseline is None:
            self._baseline = self.distance(self.var)
        return self._baseline

    def bounds(self, var: np.ndarray):
        plus, minus = dens.bound_values(self.mean, np.sqrt(var), self.cfg.alpha, self.cfg.transform)
        return dens.shared_bounds(plus, minus, self.weights, self.cfg.bins, self.cfg.smooth)

    def distance(self, var: np.ndarray) -> float:
        return self.cfg.metric.distance(*self.bounds(var))

    def updated_variance(self, theta) -> np.ndarray:
        """Grid variance after hypothetically observing the mean at ``theta``."""
        gp = self.gp
        aug = append_point(gp, theta, posterior_mean(gp, theta))
        l21, l22 = aug.chol_factor[-1, :-1], aug.chol_factor[-1, -1]
        k_star = kernel(np.atleast_2d(theta), self.cfg.grid.nodes, gp.hyperparams)[0]
        u = (k_star - l21 @ self.V) / l22
        return np.maximum(self.var - u * u, 0.0)

    def __call__(self, theta) -> float:
        try:
            var = self.updated_variance(theta)
        except DuplicatePoint:
            return self.baseline
        return self.distance(var)


def criterion(theta_star, gp: GpPosterior, cfg: CriterionConfig) -> float:
    return CriterionEvaluator(gp, cfg)(theta_star)


def asymptotic_q_from_fields(mean: np.ndarray, sigma: np.ndarray, weights: np.ndarray,
                             bins: int = dens.DEFAULT_BINS) -> float:
    """Large-sample form of the log-L1 criterion from nodal mean and spread fields.

    Evaluates ``int |d/ds E[sigma 1{T = s}]| / f(s) ds`` on the pushforward
    bins of ``mean``: the sigma-weighted level-set density is differenced
    across bin centers and divided by the pushforward pdf. The first and last
    populated bins are only partly covered by the range of ``mean``; their
    densities and centers use the covered part so the support edge does not
    show up as a spurious jump.
    """
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    w = np.asarray(weights, dtype=float)
    lo, hi = float(mean.min()), float(mean.max())
    if np.all(sigma == 0) or dens.is_degenerate(lo, hi):
        return 0.0
    edges = dens.padded_edges(lo, hi, bins)
    total = w.sum()
    mass = dens.bin_masses(mean, w, edges)
    smass = dens.bin_masses(mean, w * sigma, edges)
    support = np.flatnonzero(mass > dens.FLOOR_REL * mass.max())
    if len(support) < 3:
        raise dens.NoOverlap("too few populated bins for the level-set derivative")
    a, b = support[0], support[-1] + 1
    left = np.maximum(edges[a:b], lo)
    right = np.minimum(edges[a + 1: b + 1], hi)
    width = right - left
    f = mass[a:b] / (width * total)
    g = smass[a:b] / (width * total)
    deriv = np.gradient(g, 0.5 * (left + right))
    ok = f > dens.FLOOR_REL * f.max()
    return float(np.sum(np.abs(deriv[ok]) / f[ok] * width[ok]))


def asymptotic_q(gp: GpPosterior, cfg: CriterionConfig) -> float:
    """Theorem-style asymptotic estimate of the criterion baseline for ``gp``.

    The confidence scaling ``cfg.alpha`` multiplies the posterior standard
    deviation, matching the bound maps ``T_n +/- alpha sigma_n``.
    """
    if gp.dim > 2:
        raise ValueError("asymptotic diagnostics support 1D and 2D inputs only")
    mean, var = predict(gp, cfg.grid.nodes)
    return asymptotic_q_from_fields(mean, cfg.alpha * np.sqrt(var), cfg.grid.weights, cfg.bins)


def corollary_bound_from_fields(nodes: np.ndarray, mean: np.ndarray, sigma: np.ndarray,
                                log_f: np.ndarray, tol: float = 1e-10) -> float:
    """``|int sigma d(log f) - int sigma d(log T') + sigma(u2) - sigma(u1)|`` on a 1D grid.

    Stieltjes sums with midpoint values of ``sigma``; ``T'`` by second-order
    finite differences of the mean map.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.diff(mean) < -tol):
        raise NotMonotone("mean map decreases on the quadrature grid")
    dT = np.gradient(mean, nodes, edge_order=2)
    if np.any(dT <= 0):
        raise NotMonotone("mean map has a non-increasing stretch (T' <= 0)")
    smid = 0.5 * (sigma[1:] + sigma[:-1])
    term_f = np.sum(smid * np.diff(log_f))
    term_t = np.sum(smid * np.diff(np.log(dT)))
    return float(abs(term_f - term_t + sigma[-1] - sigma[0]))


def corollary_bound(gp: GpPosterior, input_dist, alpha: float = 1.0, resolution: int = 4001) -> float:
    """One-dimensional lower bound on the asymptotic criterion for a monotone mean map.

    Pass the same ``alpha`` as the criterion configuration to compare with
    :func:`asymptotic_q`.
    """
    if gp.dim != 1 or input_dist.dim != 1:
        raise ValueError("the corollary bound is one-dimensional")
    grid = quadrature_grid(input_dist, (resolution,))
    nodes = grid.nodes[:, 0]
    mean, var = predict(gp, grid.nodes)
    pdf = input_dist.pdf(grid.nodes)
    if np.any(pdf <= 0):
        raise ValueError("input density vanishes inside its bounds")
    return corollary_bound_from_fields(nodes, mean, alpha * np.sqrt(var), np.log(pdf))
