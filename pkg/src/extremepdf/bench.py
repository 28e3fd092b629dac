"""Reference problems and evaluation tools.

* the nonlinear oscillator forced by a Karhunen-Loeve truncated colored noise,
* tabulated maps read from tensor-grid CSV files,
* a dense-grid pdf oracle, a Latin hypercube baseline and log-pdf errors,
* pdf uncertainty envelopes from posterior realizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import density as dens
from .errors import MalformedTable, MapEvaluationFailure, NonFiniteState, ResolutionTooLarge
from .gp import Dataset, calibrate_hyperparams, fit, predict, whiten, kernel
from .inputs import KlBasis, kl_expand, latin_hypercube, quadrature_grid, read_tensor_csv


@dataclass(frozen=True)
class OscillatorParams:
    delta: float = 1.5
    alpha_r: float = 1.0
    beta: float = 0.1
    x1: float = 0.5
    x2: float = 1.5
    sigma_z: float = 4.0
    ell_z: float = 0.1
    horizon: float = 25.0
    m: int = 3
    step: float = 0.01
    kl_grid: int = 512

    def __post_init__(self):
        if not self.x1 < self.x2:
            raise ValueError("need x1 < x2")
        for name in ("delta", "beta", "sigma_z", "ell_z", "horizon", "step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def piecewise_restoring(x, params: OscillatorParams):
    """Odd restoring force: linear, then flat, then cubic hardening."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    mag = params.alpha_r * np.minimum(a, params.x1) + params.beta * np.maximum(a - params.x2, 0.0) ** 3
    out = np.copysign(mag, x)
    return float(out) if out.ndim == 0 else out


def oscillator_batch(thetas, params: OscillatorParams, basis: KlBasis, step: float | None = None,
                     chunk: int = 4096) -> np.ndarray:
    """Time-averaged response ``(1/T) int_0^T x dt`` for each row of ``thetas``.

    Classical RK4 from rest; the forcing is linearly interpolated between
    the KL grid nodes. The time average uses the trapezoid rule on the
    integration grid.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != params.m or basis.m < params.m:
        raise ValueError(f"expected {params.m} coefficients and at least as many KL modes")
    if abs(basis.horizon - params.horizon) > 1e-12 * params.horizon:
        raise ValueError("KL basis horizon does not match the oscillator horizon")
    nsteps = int(round(params.horizon / (step or params.step)))
    h = params.horizon / nsteps
    t_half = np.linspace(0.0, params.horizon, 2 * nsteps + 1)
    modes = np.stack([np.interp(t_half, basis.time_grid, e) for e in basis.eigenfunctions[: params.m]])
    out = np.empty(len(thetas))
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(0, len(thetas), chunk):
            out[s: s + chunk] = _rk4_mean(thetas[s: s + chunk] @ modes, params, h, nsteps)
    return out


def _rk4_mean(forcing: np.ndarray, p: OscillatorParams, h: float, nsteps: int) -> np.ndarray:
    # forcing[:, j] is the forcing at time j * h / 2
    x = np.zeros(len(forcing))
    v = np.zeros(len(forcing))
    acc = np.zeros(len(forcing))

    def accel(x, v, f):
        return f - p.delta * v - piecewise_restoring(x, p)

    for k in range(nsteps):
        f0, f1, f2 = forcing[:, 2 * k], forcing[:, 2 * k + 1], forcing[:, 2 * k + 2]
        k1x, k1v = v, accel(x, v, f0)
        k2x, k2v = v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v, f1)
        k3x, k3v = v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v, f1)
        k4x, k4v = v + h * k3v, accel(x + h * k3x, v + h * k3v, f2)
        x_new = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        acc += 0.5 * (x + x_new)
        x = x_new
    mean = acc * h / (nsteps * h)
    if not np.all(np.isfinite(mean)):
        raise NonFiniteState("oscillator state blew up; reduce the step size")
    return mean


def oscillator_map(theta, params: OscillatorParams, basis: KlBasis, step: float | None = None) -> float:
    return float(oscillator_batch(np.reshape(theta, (1, -1)), params, basis, step)[0])


class Oscillator:
    """Callable parameter-to-observation map of the oscillator, with its input density."""

    def __init__(self, params: OscillatorParams | None = None, basis: KlBasis | None = None):
        self.params = params or OscillatorParams()
        p = self.params
        self.basis = basis or kl_expand(p.sigma_z, p.ell_z, p.horizon, p.kl_grid, p.m)
        self.input = self.basis.input_distribution(p.m)

    def __call__(self, theta) -> float:
        return oscillator_map(theta, self.params, self.basis)

    def batch(self, thetas) -> np.ndarray:
        return oscillator_batch(thetas, self.params, self.basis)


@dataclass(eq=False)
class TabulatedMap:
    """Map interpolated from a tensor-grid table; queries are clamped to the table box."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    interpolation: str = "linear"
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if self.interpolation not in ("linear", "cubic"):
            raise MalformedTable(f"unknown interpolation {self.interpolation!r}")
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise MalformedTable("table values do not match the axes")
        if not np.all(np.isfinite(self.values)):
            raise MalformedTable("table values must be finite")
        if self.interpolation == "cubic" and min(len(a) for a in self.axes) < 4:
            raise MalformedTable("cubic interpolation needs at least 4 nodes per axis")
        self._interp = RegularGridInterpolator(self.axes, self.values, method=self.interpolation)
        self.bounds = np.array([(a[0], a[-1]) for a in self.axes])

    @property
    def dim(self) -> int:
        return len(self.axes)

    def batch(self, thetas) -> np.ndarray:
        x = np.atleast_2d(np.asarray(thetas, dtype=float))
        x = np.clip(x, self.bounds[:, 0], self.bounds[:, 1])
        return self._interp(x)

    def __call__(self, theta) -> float:
        return float(self.batch(np.reshape(theta, (1, -1)))[0])


def load_tabulated_map(path, interpolation: str = "cubic") -> TabulatedMap:
    axes, values = read_tensor_csv(path, "q")
    return TabulatedMap(axes, values, interpolation)


def evaluate_many(map_fn, thetas) -> np.ndarray:
    """Evaluate a map on many points, using its vectorized ``batch`` when it has one."""
    thetas = np.atleast_2d(thetas)
    try:
        if hasattr(map_fn, "batch"):
            out = np.asarray(map_fn.batch(thetas), dtype=float)
        else:
            out = np.array([float(map_fn(t)) for t in thetas])
    except Exception as exc:  # noqa: BLE001 - wrap any user map failure
        raise MapEvaluationFailure(f"map evaluation failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise MapEvaluationFailure("map returned non-finite values")
    return out


def exact_pdf_oracle(map_fn, input_dist, resolution, bins: int = dens.DEFAULT_BINS,
                     max_nodes: int | None = None) -> dens.DensityEstimate:
    """Pushforward of the true map evaluated at every quadrature node."""
    kw = {} if max_nodes is None else {"max_nodes": max_nodes}
    grid = quadrature_grid(input_dist, resolution, **kw)
    return dens.pushforward(evaluate_many(map_fn, grid.nodes), grid, bins)


def rebin(estimate: dens.DensityEstimate, edges) -> dens.DensityEstimate:
    """Redistribute ``estimate`` onto ``edges`` assuming uniform density within each bin."""
    edges = np.asarray(edges, dtype=float)
    cdf = np.interp(edges, estimate.bin_edges, estimate.cdf)
    masses = np.diff(cdf)
    return dens.from_masses(masses, edges, 1.0, below=cdf[0])


def log_l1_error(estimate: dens.DensityEstimate, reference: dens.DensityEstimate) -> float:
    """Log-pdf L1 error of ``estimate`` against ``reference`` on the reference bins."""
    same = (estimate.bin_edges.shape == reference.bin_edges.shape
            and np.array_equal(estimate.bin_edges, reference.bin_edges))
    est = estimate if same else rebin(estimate, reference.bin_edges)
    return dens.log_l1_distance(est, reference)


def design_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass
class BaselineRow:
    size: int
    mean_error: float
    sd_error: float
    errors: list[float]
    failures: int = 0


def surrogate_error(dataset: Dataset, grid, reference: dens.DensityEstimate, restarts: int = 5,
                    seed: int = 0, transform=None) -> float:
    """Fit a calibrated GP to ``dataset`` and return the log-L1 error of its mean pushforward."""
    hp = calibrate_hyperparams(dataset, restarts, seed)
    gp = fit(dataset, hp, max_jitter=1e-6 * hp.signal_variance)
    mean, _ = predict(gp, grid.nodes)
    if transform is not None:
        mean = transform(mean)
    est = dens.pushforward(mean, grid, edges=reference.bin_edges)
    return log_l1_error(est, reference)


def lh_baseline(map_fn, input_dist, sizes, repeats: int, seed: int, reference: dens.DensityEstimate,
                resolution, restarts: int = 5, log_observable: bool = False) -> list[BaselineRow]:
    """Errors of GP surrogates trained on independent Latin hypercube designs.

    For every size, ``repeats`` designs are drawn, the map is evaluated on
    each, and the mean of the error is reported with its standard deviation.
    Designs whose surrogate cannot be fitted are counted as failures.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    grid = quadrature_grid(input_dist, resolution)
    transform = np.exp if log_observable else None
    rows = []
    for n in sizes:
        errors, failures = [], 0
        for r in range(repeats):
            X = latin_hypercube(int(n), input_dist.bounds, design_seed(seed, int(n), r))
            y = evaluate_many(map_fn, X)
            if log_observable:
                y = np.log(y)
            try:
                errors.append(surrogate_error(Dataset(X, y), grid, reference, restarts,
                                              design_seed(seed, int(n), r, 1), transform))
            except (ArithmeticError, dens.NoOverlap, ValueError):
                failures += 1
        e = np.array(errors)
        rows.append(BaselineRow(int(n), float(e.mean()) if len(e) else np.nan,
                                float(e.std(ddof=1)) if len(e) > 1 else 0.0, errors, failures))
    return rows


@dataclass(frozen=True, eq=False)
class UncertaintyBand:
    bin_edges: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean_pdf: np.ndarray


MAX_BAND_NODES = 6000


def uncertainty_band(gp, grid, realizations: int = 200, bins: int = dens.DEFAULT_BINS, seed: int = 0,
                     transform=None) -> UncertaintyBand:
    """Per-bin min/max of the pdfs of posterior realizations on the grid nodes.

    Realizations are ``mean + A z`` with ``A`` the symmetric square root of
    the posterior covariance on the nodes (eigenvalues below 1e-12 of the
    largest are treated as zero). The envelope is taken over the mean
    pushforward together with the realizations, all on shared edges.
    """
    if realizations < 2:
        raise ValueError("need at least 2 realizations")
    N = len(grid.weights)
    if N > MAX_BAND_NODES:
        raise ResolutionTooLarge(f"{N} nodes exceed the uncertainty-band cap of {MAX_BAND_NODES}")
    mean, _ = predict(gp, grid.nodes)
    V = whiten(gp, grid.nodes)
    cov = kernel(grid.nodes, grid.nodes, gp.hyperparams) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    lam, U = np.linalg.eigh(cov)
    cutoff = 1e-12 * max(lam.max(), gp.hyperparams.signal_variance)
    A = U * np.sqrt(np.where(lam > cutoff, lam, 0.0))
    rng = np.random.default_rng(seed)
    samples = mean[None, :] + (A @ rng.standard_normal((N, realizations))).T
    fields = np.vstack([mean[None, :], samples])
    if transform is not None:
        fields = transform(fields)
    lo, hi = float(fields.min()), float(fields.max())
    if dens.is_degenerate(lo, hi):
        pm = dens.point_mass(0.5 * (lo + hi))
        return UncertaintyBand(pm.bin_edges, pm.pdf, pm.pdf, pm.pdf)
    edges = dens.padded_edges(lo, hi, bins)
    pdfs = np.array([dens.pushforward(f, grid, edges=edges).pdf for f in fields])
    return UncertaintyBand(edges, pdfs.min(0), pdfs.max(0), pdfs[0])


def band_to_csv(band: UncertaintyBand, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s_left", "s_right", "lower", "upper", "mean_pdf"])
        for row in zip(band.bin_edges[:-1], band.bin_edges[1:], band.lower, band.upper, band.mean_pdf):
            w.writerow([format(x, ".17g") for x in row])


class SyntheticMap:
    def __init__(self, name: str, fn, dim: int):
        self.name, self._fn, self.dim = name, fn, dim

    def batch(self, thetas) -> np.ndarray:
        return self._fn(np.atleast_2d(np.asarray(thetas, dtype=float)))

    def __call__(self, theta) -> float:
        return float(self.batch(np.reshape(theta, (1, -1)))[0])


SYNTHETIC = {
    "cubic1d": SyntheticMap("cubic1d", lambda x: x[:, 0] ** 3, 1),
    "smooth2d": SyntheticMap(
        "smooth2d", lambda x: np.exp(0.4 * x[:, 0]) + 0.3 * x[:, 1] ** 2 + 0.2 * x[:, 0] * x[:, 1], 2),
    "tanh2d": SyntheticMap(
        "tanh2d", lambda x: x[:, 0] + 2.0 * np.tanh(2.0 * (x[:, 0] + x[:, 1] - 1.5)), 2),
}
