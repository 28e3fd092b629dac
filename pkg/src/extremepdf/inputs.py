"""Input densities over a bounded parameter box, tensor quadrature, Latin
hypercube designs and the Karhunen-Loeve parameterization of a stationary
forcing process."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import eigh
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import DimensionMismatch, MalformedTable, NonPositiveEigenvalue, ResolutionTooLarge

MAX_NODES = 2_000_000


def _check_bounds(bounds) -> np.ndarray:
    b = np.array(bounds, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError(f"bounds must be finite with lower < upper: {bounds}")
    b.setflags(write=False)
    return b


@dataclass(frozen=True, eq=False)
class GaussianDiagonal:
    """Zero-mean normal density with diagonal covariance, truncated to a box.

    The density is *not* renormalized after truncation; its integral over the
    box is :attr:`mass`.
    """

    variances: np.ndarray
    bounds: np.ndarray | None = None

    def __post_init__(self):
        var = np.array(self.variances, dtype=float).reshape(-1)
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        var.setflags(write=False)
        object.__setattr__(self, "variances", var)
        if self.bounds is None:
            s = 4.0 * np.sqrt(var)
            object.__setattr__(self, "bounds", _check_bounds(np.c_[-s, s]))
        else:
            object.__setattr__(self, "bounds", _check_bounds(self.bounds))
        if len(self.bounds) != len(var):
            raise DimensionMismatch("bounds and variances disagree in dimension")

    @property
    def dim(self) -> int:
        return len(self.variances)

    @property
    def mass(self) -> float:
        sd = np.sqrt(self.variances)
        return float(np.prod(ndtr(self.bounds[:, 1] / sd) - ndtr(self.bounds[:, 0] / sd)))

    def pdf(self, thetas) -> np.ndarray:
        x = _points(thetas, self.dim)
        logp = -0.5 * (x**2 / self.variances).sum(1) - 0.5 * np.log(2 * np.pi * self.variances).sum()
        return np.where(_inside(x, self.bounds), np.exp(logp), 0.0)


@dataclass(frozen=True, eq=False)
class EmpiricalGrid:
    """Tabulated density on a tensor grid, multilinearly interpolated and
    renormalized to unit mass over the grid's bounding box."""

    axes: tuple[np.ndarray, ...]
    density_values: np.ndarray

    def __post_init__(self):
        axes = tuple(np.array(a, dtype=float).reshape(-1) for a in self.axes)
        vals = np.array(self.density_values, dtype=float)
        if vals.shape != tuple(len(a) for a in axes):
            raise MalformedTable(f"density shape {vals.shape} does not match axes")
        if any(len(a) < 2 or np.any(np.diff(a) <= 0) for a in axes):
            raise MalformedTable("axes need at least 2 strictly increasing nodes")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise MalformedTable("density values must be finite and nonnegative")
        total = vals
        for a in reversed(axes):
            total = np.trapezoid(total, a, axis=-1)
        if total <= 0:
            raise MalformedTable("density integrates to zero")
        vals = vals / total
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "density_values", vals)
        object.__setattr__(self, "_interp", RegularGridInterpolator(
            axes, vals, method="linear", bounds_error=False, fill_value=0.0))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def bounds(self) -> np.ndarray:
        return _check_bounds([(a[0], a[-1]) for a in self.axes])

    @property
    def mass(self) -> float:
        return 1.0

    def pdf(self, thetas) -> np.ndarray:
        x = _points(thetas, self.dim)
        return np.maximum(self._interp(x), 0.0)

    @classmethod
    def from_csv(cls, path) -> EmpiricalGrid:
        axes, values = read_tensor_csv(path, "density")
        return cls(axes, values)


InputDistribution = GaussianDiagonal | EmpiricalGrid


def read_tensor_csv(path, value_name: str) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Read ``theta_1,...,theta_m,<value_name>`` rows forming a full row-major tensor grid."""
    try:
        rows = list(csv.reader(Path(path).read_text().splitlines()))
    except OSError as exc:
        raise MalformedTable(f"cannot read {path}: {exc}") from None
    if not rows:
        raise MalformedTable(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    m = len(header) - 1
    if m < 1 or header[-1] != value_name or header[:-1] != [f"theta_{i + 1}" for i in range(m)]:
        raise MalformedTable(f"bad header {header}")
    try:
        arr = np.array(body, dtype=float)
    except ValueError:
        raise MalformedTable(f"non-numeric entries in {path}") from None
    if arr.ndim != 2 or arr.shape[1] != m + 1:
        raise MalformedTable(f"ragged rows in {path}")
    axes = tuple(np.unique(arr[:, i]) for i in range(m))
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(arr):
        raise MalformedTable(f"{len(arr)} rows do not form a complete {shape} tensor grid")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m)
    if not np.array_equal(mesh, arr[:, :m]):
        raise MalformedTable("grid nodes are incomplete or not in row-major order")
    return axes, arr[:, m].reshape(shape)


def write_tensor_csv(path, axes, values, value_name: str) -> None:
    m = len(axes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"theta_{i + 1}" for i in range(m)] + [value_name])
        for node, v in zip(mesh, np.asarray(values).reshape(-1)):
            w.writerow([format(x, ".17g") for x in (*node, v)])


def _points(thetas, dim: int) -> np.ndarray:
    x = np.asarray(thetas, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.shape[-1] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {x.shape[-1]}")
    return x


def _inside(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return np.all((x >= bounds[:, 0]) & (x <= bounds[:, 1]), axis=1)


def density(dist: InputDistribution, theta) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != dist.dim:
        raise DimensionMismatch(f"expected dimension {dist.dim}, got {theta.shape[0]}")
    return float(dist.pdf(theta[None, :])[0])


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    nodes: np.ndarray  # (N, m)
    weights: np.ndarray  # (N,)
    resolution: tuple[int, ...]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return len(self.weights)


def quadrature_grid(dist: InputDistribution, resolution, max_nodes: int = MAX_NODES) -> QuadratureGrid:
    """Midpoint-rule tensor grid over the box with weights ``f(node) * cell volume``."""
    res = tuple(int(r) for r in np.broadcast_to(np.asarray(resolution), (dist.dim,)))
    if min(res) < 2:
        raise ValueError("each resolution must be at least 2")
    total = int(np.prod(res, dtype=np.int64))
    if total > max_nodes:
        raise ResolutionTooLarge(f"{total} quadrature nodes exceed the cap of {max_nodes}")
    b = dist.bounds
    h = (b[:, 1] - b[:, 0]) / np.array(res)
    axes = [b[i, 0] + h[i] * (np.arange(res[i]) + 0.5) for i in range(dist.dim)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dist.dim)
    weights = dist.pdf(nodes) * np.prod(h)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureGrid(nodes, weights, res)


def latin_hypercube(n: int, bounds, seed: int) -> np.ndarray:
    """``n`` points with exactly one point per stratum in every 1D projection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    b = _check_bounds(bounds)
    u = qmc.LatinHypercube(len(b), rng=np.random.default_rng(seed)).random(n)
    return qmc.scale(u, b[:, 0], b[:, 1])


@dataclass(frozen=True, eq=False)
class KlBasis:
    eigenvalues: np.ndarray  # descending
    eigenfunctions: np.ndarray  # (m, G), orthonormal under the trapezoid rule
    time_grid: np.ndarray  # (G,)

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1] - self.time_grid[0])

    def input_distribution(self, m: int | None = None) -> GaussianDiagonal:
        """Input density of the KL coefficients, ``N(0, diag(eigenvalues))``."""
        return GaussianDiagonal(self.eigenvalues[: m or self.m])


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def kl_expand(sigma_z: float, ell_z: float, horizon: float, grid_size: int = 512, m: int = 3) -> KlBasis:
    """Karhunen-Loeve modes of ``C(tau) = sigma_z^2 exp(-tau^2 / (2 ell_z^2))`` on ``[0, horizon]``.

    Nystrom discretization with trapezoid weights: the symmetric matrix
    ``W^1/2 C W^1/2`` is diagonalized and its eigenvectors mapped back with
    ``W^-1/2``, so the returned modes satisfy ``e_i^T W e_j = delta_ij``.
    """
    if m > grid_size:
        raise ValueError("cannot retain more modes than grid nodes")
    t = np.linspace(0.0, horizon, grid_size)
    C = sigma_z**2 * np.exp(-((t[:, None] - t[None, :]) ** 2) / (2 * ell_z**2))
    sw = np.sqrt(trapezoid_weights(t))
    vals, vecs = eigh(sw[:, None] * C * sw[None, :],
                      subset_by_index=[grid_size - m, grid_size - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if np.any(vals <= 0):
        raise NonPositiveEigenvalue(f"retained eigenvalue {vals.min():g} is not positive")
    efuns = (vecs / sw[:, None]).T
    # fix the sign convention so results do not depend on the LAPACK driver
    signs = np.sign(efuns[np.arange(m), np.argmax(np.abs(efuns), axis=1)])
    efuns = efuns * signs[:, None]
    return KlBasis(vals, efuns, t)


def forcing_signal(basis: KlBasis, theta) -> np.ndarray:
    """``sum_i theta_i e_i(t)`` on the basis time grid."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] > basis.m:
        raise DimensionMismatch(f"{theta.shape[0]} coefficients for {basis.m} modes")
    return theta @ basis.eigenfunctions[: theta.shape[0]]
