"""Gaussian process surrogate with a squared-exponential kernel.

The posterior is stored as an immutable value: the Cholesky factor of the
jittered kernel matrix, the whitened residuals and the prediction weights.
New design points are absorbed with an O(n^2) bordered Cholesky update.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import DimensionMismatch, DuplicatePoint, FactorizationFailure

DUPLICATE_TOL = 1e-9
# Jitter relative to the signal variance.
JITTER_REL = 1e-12
MAX_JITTER_REL = 1e-6
HYPER_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True)
class KernelHyperparams:
    signal_variance: float
    lengthscales: tuple[float, ...]
    jitter: float | None = None

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if self.jitter is None:
            object.__setattr__(self, "jitter", JITTER_REL * self.signal_variance)
        if self.signal_variance <= 0 or self.jitter <= 0 or min(ls) <= 0:
            raise ValueError(f"hyperparameters must be strictly positive: {self}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    @classmethod
    def isotropic(cls, signal_variance: float, lengthscale: float, dim: int) -> KernelHyperparams:
        return cls(signal_variance, (lengthscale,) * dim)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered design points ``thetas[i] -> values[i]``; near-duplicates are rejected."""

    thetas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=float)
        if thetas.ndim == 1:
            thetas = thetas[:, None]
        values = np.array(self.values, dtype=float).reshape(-1)
        if thetas.ndim != 2 or len(thetas) != len(values):
            raise DimensionMismatch(f"thetas {thetas.shape} and values {values.shape} disagree")
        if len(thetas) > 1:
            d = _pairwise_sqdist(thetas, thetas)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() < DUPLICATE_TOL**2:
                raise DuplicatePoint("dataset contains points closer than 1e-9")
        thetas.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, dim: int) -> Dataset:
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def __len__(self) -> int:
        return len(self.values)

    def distance_to(self, theta) -> float:
        if len(self) == 0:
            return np.inf
        return float(np.sqrt(_pairwise_sqdist(self.thetas, np.atleast_2d(theta)).min()))

    def append(self, theta, value: float) -> Dataset:
        theta = _as_point(theta, self.dim)
        if self.distance_to(theta) < DUPLICATE_TOL:
            raise DuplicatePoint(f"{theta} duplicates an existing design point")
        return Dataset(np.vstack([self.thetas, theta]), np.append(self.values, value))

    def to_csv(self, path) -> None:
        header = [f"theta_{i + 1}" for i in range(self.dim)] + ["q"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, v in zip(self.thetas, self.values):
                w.writerow([format(x, ".17g") for x in (*t, v)])

    @classmethod
    def from_csv(cls, path) -> Dataset:
        rows = list(csv.reader(Path(path).read_text().splitlines()))
        header, body = rows[0], rows[1:]
        if header[-1] != "q" or any(h != f"theta_{i + 1}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"unexpected dataset header {header}")
        arr = np.array(body, dtype=float).reshape(-1, len(header))
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True, eq=False)
class GpPosterior:
    dataset: Dataset
    hyperparams: KernelHyperparams
    prior_mean: float
    chol_factor: np.ndarray  # lower triangular, L L^T = K + jitter I
    whitened: np.ndarray  # L^{-1} (y - prior_mean)
    weights: np.ndarray = field(repr=False)  # (K + jitter I)^{-1} (y - prior_mean)

    @property
    def dim(self) -> int:
        return self.dataset.dim

    @property
    def n(self) -> int:
        return len(self.dataset)


def _pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _as_point(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != dim:
        raise DimensionMismatch(f"expected a point of dimension {dim}, got {theta.shape[0]}")
    return theta


def _as_points(thetas, dim: int) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas.reshape(-1, 1) if dim == 1 else thetas.reshape(1, -1)
    if thetas.ndim != 2 or thetas.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got shape {thetas.shape}")
    return thetas


def kernel(a, b, hp: KernelHyperparams) -> np.ndarray:
    """Squared-exponential kernel matrix ``k0(a, b)``."""
    ls = np.asarray(hp.lengthscales)
    a = np.atleast_2d(a) / ls
    b = np.atleast_2d(b) / ls
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return hp.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def prior(hyperparams: KernelHyperparams, prior_mean: float = 0.0) -> GpPosterior:
    """Posterior with no data, i.e. the prior process."""
    return GpPosterior(
        Dataset.empty(hyperparams.dim), hyperparams, float(prior_mean),
        np.zeros((0, 0)), np.zeros(0), np.zeros(0),
    )


def fit(
    dataset: Dataset,
    hyperparams: KernelHyperparams,
    prior_mean: float | None = None,
    max_jitter: float | None = None,
) -> GpPosterior:
    """Condition the prior on ``dataset``.

    ``prior_mean`` defaults to the mean of the observed values. When
    ``max_jitter`` is given, a failed factorization is retried with the jitter
    raised by factors of 100 up to that value.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit a Gaussian process to an empty dataset")
    if dataset.dim != hyperparams.dim:
        raise DimensionMismatch(f"dataset has dim {dataset.dim}, hyperparameters {hyperparams.dim}")
    if prior_mean is None:
        prior_mean = float(dataset.values.mean())
    K = kernel(dataset.thetas, dataset.thetas, hyperparams)
    hp = hyperparams
    while True:
        try:
            L = cholesky(K + hp.jitter * np.eye(len(K)), lower=True, check_finite=False)
            break
        except LinAlgError:
            if max_jitter is None or hp.jitter * 100 > max_jitter * (1 + 1e-12):
                raise FactorizationFailure(
                    f"kernel matrix not positive definite with jitter {hp.jitter:g}"
                ) from None
            hp = replace(hp, jitter=hp.jitter * 100)
    r = dataset.values - prior_mean
    z = solve_triangular(L, r, lower=True, check_finite=False)
    w = solve_triangular(L.T, z, lower=False, check_finite=False)
    return GpPosterior(dataset, hp, float(prior_mean), L, z, w)


def whiten(gp: GpPosterior, thetas) -> np.ndarray:
    """``L^{-1} k0(Theta, thetas)``; shape ``(n, len(thetas))``."""
    thetas = _as_points(thetas, gp.dim)
    if gp.n == 0:
        return np.zeros((0, len(thetas)))
    k = kernel(gp.dataset.thetas, thetas, gp.hyperparams)
    return solve_triangular(gp.chol_factor, k, lower=True, check_finite=False)


def predict(gp: GpPosterior, thetas) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at each row of ``thetas``."""
    thetas = _as_points(thetas, gp.dim)
    if gp.n == 0:
        return (np.full(len(thetas), gp.prior_mean),
                np.full(len(thetas), gp.hyperparams.signal_variance))
    k = kernel(gp.dataset.thetas, thetas, gp.hyperparams)
    mean = gp.prior_mean + k.T @ gp.weights
    v = solve_triangular(gp.chol_factor, k, lower=True, check_finite=False)
    var = gp.hyperparams.signal_variance - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def posterior_mean(gp: GpPosterior, theta) -> float:
    theta = _as_point(theta, gp.dim)
    return float(predict(gp, theta[None, :])[0][0])


def posterior_variance(gp: GpPosterior, theta) -> float:
    theta = _as_point(theta, gp.dim)
    return float(predict(gp, theta[None, :])[1][0])


def bordered_row(gp: GpPosterior, theta) -> tuple[np.ndarray, float]:
    """New last row ``(l21, l22)`` of the Cholesky factor after adding ``theta``.

    One triangular solve and a square root, O(n^2).
    """
    theta = _as_point(theta, gp.dim)
    if gp.dataset.distance_to(theta) < DUPLICATE_TOL:
        raise DuplicatePoint(f"{theta} duplicates an existing design point")
    hp = gp.hyperparams
    c22 = hp.signal_variance + hp.jitter
    if gp.n == 0:
        return np.zeros(0), float(np.sqrt(c22))
    c21 = kernel(gp.dataset.thetas, theta[None, :], hp)[:, 0]
    l21 = solve_triangular(gp.chol_factor, c21, lower=True, check_finite=False)
    d = c22 - l21 @ l21
    if not d > 0:
        raise FactorizationFailure(f"bordered Cholesky pivot is {d:g}")
    return l21, float(np.sqrt(d))


def append_point(gp: GpPosterior, theta, value: float) -> GpPosterior:
    """Posterior after observing ``value`` at ``theta``, hyperparameters and prior mean fixed."""
    theta = _as_point(theta, gp.dim)
    l21, l22 = bordered_row(gp, theta)
    n = gp.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = gp.chol_factor
    L[n, :n] = l21
    L[n, n] = l22
    z = np.append(gp.whitened, (value - gp.prior_mean - l21 @ gp.whitened) / l22)
    w = solve_triangular(L.T, z, lower=False, check_finite=False)
    return GpPosterior(gp.dataset.append(theta, value), gp.hyperparams, gp.prior_mean, L, z, w)


def log_marginal_likelihood(
    dataset: Dataset, hyperparams: KernelHyperparams, prior_mean: float | None = None
) -> float:
    gp = fit(dataset, hyperparams, prior_mean)
    n = len(dataset)
    return float(
        -0.5 * gp.whitened @ gp.whitened
        - np.log(np.diag(gp.chol_factor)).sum()
        - 0.5 * n * np.log(2 * np.pi)
    )


def _neg_lml_and_grad(logp: np.ndarray, X: np.ndarray, r: np.ndarray, diffs: np.ndarray):
    sv = np.exp(logp[0])
    ls = np.exp(logp[1:])
    hp = KernelHyperparams(sv, tuple(ls))
    Kc = kernel(X, X, hp) + hp.jitter * np.eye(len(X))
    L = cholesky(Kc, lower=True, check_finite=False)
    z = solve_triangular(L, r, lower=True, check_finite=False)
    a = solve_triangular(L.T, z, lower=False, check_finite=False)
    nll = 0.5 * z @ z + np.log(np.diag(L)).sum() + 0.5 * len(r) * np.log(2 * np.pi)
    Linv = solve_triangular(L, np.eye(len(r)), lower=True, check_finite=False)
    W = np.outer(a, a) - Linv.T @ Linv
    grad = np.empty_like(logp)
    # jitter scales with the signal variance, so dK/dlog(sv) is the full jittered matrix
    grad[0] = -0.5 * np.sum(W * Kc)
    Knoj = Kc - hp.jitter * np.eye(len(r))
    for d in range(len(ls)):
        grad[d + 1] = -0.5 * np.sum(W * Knoj * diffs[d] / ls[d] ** 2)
    return nll, grad


def _penalized(logp, X, r, diffs):
    # an unfactorizable trial point pushes the line search back instead of aborting the restart
    try:
        return _neg_lml_and_grad(logp, X, r, diffs)
    except LinAlgError:
        return 1e300, np.zeros_like(logp)


def calibrate_hyperparams(
    dataset: Dataset,
    restarts: int = 5,
    seed: int = 0,
    bounds: tuple[float, float] = HYPER_BOUNDS,
) -> KernelHyperparams:
    """Maximize the log marginal likelihood over signal variance and lengthscales.

    Multi-start L-BFGS-B in log-space, prior mean fixed at the data mean.
    The first start is data-informed, the remaining ``restarts - 1`` are
    drawn from ``default_rng(seed)``.
    """
    if len(dataset) < 3:
        raise ValueError("hyperparameter calibration needs at least 3 points")
    X, y = dataset.thetas, dataset.values
    r = y - y.mean()
    m = dataset.dim
    diffs = (X[:, None, :] - X[None, :, :]).transpose(2, 0, 1) ** 2
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    extent = np.ptp(X, axis=0)
    extent = np.where(extent > 0, extent, 1.0)
    var0 = float(np.clip(r.var(), bounds[0], bounds[1]))

    rng = np.random.default_rng(seed)
    starts = [np.log(np.r_[var0, np.clip(0.3 * extent, *bounds)])]
    for _ in range(max(restarts, 1) - 1):
        s = np.r_[np.log(var0) + rng.uniform(-2.0, 2.0),
                  np.log(extent) + rng.uniform(np.log(0.02), np.log(2.0), m)]
        starts.append(np.clip(s, lo, hi))

    best = None
    for x0 in starts:
        res = minimize(_penalized, x0, args=(X, r, diffs), jac=True,
                       method="L-BFGS-B", bounds=[(lo, hi)] * (m + 1))
        if res.fun < 1e299 and np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FactorizationFailure("all hyperparameter restarts failed to factorize")
    p = np.exp(best.x)
    return KernelHyperparams(p[0], tuple(p[1:]))
