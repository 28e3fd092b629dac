"""Sequential sampling loop for pushforward pdf estimation.

Each iteration fits (or updates) the surrogate, forms the mean pdf and the
two confidence-bound pdfs, stops once the bound pdfs are close, and otherwise
evaluates the true map at the minimizer of the next-point criterion.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import density as dens
from .acquisition import CriterionConfig, CriterionEvaluator, Metric
from .bench import log_l1_error
from .errors import CorruptCheckpoint, FactorizationFailure, InvalidConfig, MapEvaluationFailure
from .gp import (
    DUPLICATE_TOL,
    Dataset,
    GpPosterior,
    KernelHyperparams,
    append_point,
    calibrate_hyperparams,
    fit,
)
from .inputs import QuadratureGrid, latin_hypercube, quadrature_grid
from .optimize import PsoConfig, pso_minimize

CHECKPOINT_FORMAT = "extremepdf-checkpoint"
CHECKPOINT_VERSION = 1
MAX_JITTER_REL = 1e-6
PERTURB_REL = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    nstart: int = 6
    ncore: int = 12
    max_iterations: int = 50
    epsilon: float = 1e-2
    alpha: float = 1.96
    recalibrate_every: int = 0
    resolution: tuple[int, ...] = (40,)
    bins: int = dens.DEFAULT_BINS
    seed: int = 0
    log_observable: bool = False
    calibration_restarts: int = 5
    smooth: float = 0.0
    pso: PsoConfig = field(default_factory=PsoConfig)

    def __post_init__(self):
        if self.nstart < 2:
            raise InvalidConfig("nstart must be >= 2")
        if self.ncore < 0 or self.max_iterations < 0 or self.recalibrate_every < 0:
            raise InvalidConfig("ncore, max_iterations and recalibrate_every must be >= 0")
        if not self.epsilon > 0 or not self.alpha > 0:
            raise InvalidConfig("epsilon and alpha must be positive")
        if self.bins < 10:
            raise InvalidConfig("bins must be >= 10")
        if self.calibration_restarts < 1:
            raise InvalidConfig("calibration_restarts must be >= 1")
        pso = self.pso if isinstance(self.pso, PsoConfig) else PsoConfig(**self.pso)
        object.__setattr__(self, "pso", pso)
        object.__setattr__(self, "resolution", tuple(int(r) for r in np.atleast_1d(self.resolution)))

    def calibrates_at(self, k: int) -> bool:
        if k < self.ncore or k == 0:
            return True
        return self.recalibrate_every > 0 and k % self.recalibrate_every == 0

    def metric_at(self, k: int) -> Metric:
        return Metric.L2 if k < self.ncore else Metric.LOG_L1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        d["pso"] = {k: v for k, v in d["pso"].items() if k != "bounds"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SamplerConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown sampler keys {sorted(unknown)}")
        d = dict(d)
        if "pso" in d:
            pso = dict(d["pso"])
            bad = set(pso) - set(PsoConfig.__dataclass_fields__) | ({"bounds"} & set(pso))
            if bad:
                raise InvalidConfig(f"unknown or disallowed pso keys {sorted(bad)}")
            try:
                d["pso"] = PsoConfig(**pso)
            except ValueError as exc:
                raise InvalidConfig(str(exc)) from None
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True)
class IterationRecord:
    index: int
    n_points: int
    theta_chosen: tuple[float, ...]
    q_observed: float
    criterion_value: float
    distance_fpm: float
    error_vs_oracle: float | None
    metric: str
    wall_time: float = 0.0


@dataclass(eq=False)
class RunResult:
    density: dens.DensityEstimate
    dataset: Dataset
    records: list[IterationRecord]
    status: str  # "converged" or "max_iterations"
    gp: GpPosterior
    bounds: tuple[dens.DensityEstimate, dens.DensityEstimate]
    distance_fpm: float
    error_vs_oracle: float | None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass(eq=False)
class _State:
    k: int
    observed: Dataset
    gp: GpPosterior | None
    hyperparams: KernelHyperparams | None
    records: list[IterationRecord]


def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _transform(cfg: SamplerConfig):
    return np.exp if cfg.log_observable else None


def _gp_values(cfg: SamplerConfig, q: np.ndarray) -> np.ndarray:
    if not cfg.log_observable:
        return q
    if np.any(q <= 0):
        raise MapEvaluationFailure("log_observable requires strictly positive map values")
    return np.log(q)


def _gp_dataset(cfg: SamplerConfig, observed: Dataset) -> Dataset:
    return Dataset(observed.thetas, _gp_values(cfg, observed.values))


def _default_hyperparams(data: Dataset, bounds: np.ndarray) -> KernelHyperparams:
    sv = float(np.var(data.values)) if len(data) > 1 else 1.0
    return KernelHyperparams(max(sv, 1e-3), tuple(0.25 * (bounds[:, 1] - bounds[:, 0])))


def _fit(data: Dataset, hp: KernelHyperparams) -> GpPosterior:
    return fit(data, hp, max_jitter=MAX_JITTER_REL * hp.signal_variance)


def _evaluate_map(map_fn, theta) -> float:
    try:
        q = float(map_fn(np.array(theta)))
    except MapEvaluationFailure:
        raise
    except Exception as exc:  # noqa: BLE001 - any user map failure aborts the run
        raise MapEvaluationFailure(f"map failed at {list(theta)}: {exc}") from exc
    if not np.isfinite(q):
        raise MapEvaluationFailure(f"map returned {q} at {list(theta)}")
    return q


def _initial_state(map_fn, input_dist, cfg: SamplerConfig) -> _State:
    X = latin_hypercube(cfg.nstart, input_dist.bounds, derived_seed(cfg.seed, 0))
    q = np.array([_evaluate_map(map_fn, x) for x in X])
    return _State(0, Dataset(X, q), None, None, [])


def _perturb_duplicate(theta, observed: Dataset, bounds: np.ndarray, rng) -> np.ndarray:
    extent = bounds[:, 1] - bounds[:, 0]
    theta = np.asarray(theta, dtype=float)
    while observed.distance_to(theta) < DUPLICATE_TOL:
        d = rng.standard_normal(len(theta))
        theta = np.clip(theta + PERTURB_REL * extent * d / np.linalg.norm(d), bounds[:, 0], bounds[:, 1])
    return theta


def _refresh_gp(state: _State, cfg: SamplerConfig, bounds: np.ndarray) -> None:
    """Ensure ``state.gp`` is current, recalibrating when the schedule asks for it."""
    if state.gp is not None:
        return
    data = _gp_dataset(cfg, state.observed)
    if cfg.calibrates_at(state.k) or state.hyperparams is None:
        try:
            state.hyperparams = calibrate_hyperparams(
                data, cfg.calibration_restarts, derived_seed(cfg.seed, state.k, 1))
        except FactorizationFailure:
            state.hyperparams = state.hyperparams or _default_hyperparams(data, bounds)
    state.gp = _fit(data, state.hyperparams)


def _loop(state: _State, map_fn, input_dist, cfg: SamplerConfig, grid: QuadratureGrid,
          reference: dens.DensityEstimate | None, checkpoint, callback, executor) -> RunResult:
    bounds = np.asarray(input_dist.bounds)
    transform = _transform(cfg)
    pso_base = cfg.pso.with_bounds(bounds)
    while True:
        t0 = time.perf_counter()
        _refresh_gp(state, cfg, bounds)
        gp = state.gp
        metric = cfg.metric_at(state.k)
        crit_cfg = CriterionConfig(grid, cfg.alpha, cfg.bins, metric, transform, cfg.smooth)
        evaluator = CriterionEvaluator(gp, crit_cfg)
        mean_vals = evaluator.mean if transform is None else transform(evaluator.mean)
        f_n = dens.pushforward(mean_vals, grid, cfg.bins, smooth=cfg.smooth)
        f_plus, f_minus = evaluator.bounds(evaluator.var)
        try:
            dist = dens.log_l1_distance(f_plus, f_minus)
        except dens.NoOverlap:
            dist = np.inf
        err = None
        if reference is not None:
            est = dens.pushforward(mean_vals, grid, edges=reference.bin_edges)
            try:
                err = log_l1_error(est, reference)
            except dens.NoOverlap:
                err = np.inf
        if callback is not None:
            callback(state.k, f_n, f_plus, f_minus)

        status = None
        if dist < cfg.epsilon:
            status = "converged"
        elif state.k >= cfg.max_iterations:
            status = "max_iterations"
        if status is not None:
            return RunResult(f_n, state.observed, state.records, status, gp, (f_plus, f_minus), dist, err)

        def objective(theta):
            try:
                return evaluator(theta)
            except dens.NoOverlap:
                return np.inf

        pso_cfg = replace(pso_base, seed=derived_seed(cfg.pso.seed, state.k, 2))
        theta, crit = pso_minimize(objective, pso_cfg, executor=executor)
        rng = np.random.default_rng(derived_seed(cfg.seed, state.k, 3))
        theta = _perturb_duplicate(theta, state.observed, bounds, rng)
        q = _evaluate_map(map_fn, theta)
        y = float(_gp_values(cfg, np.array([q]))[0])

        state.observed = state.observed.append(theta, q)
        k_next = state.k + 1
        if cfg.calibrates_at(k_next):
            state.gp = None
        else:
            try:
                state.gp = append_point(gp, theta, y)
            except (FactorizationFailure, ArithmeticError):
                state.gp = _fit(_gp_dataset(cfg, state.observed), state.hyperparams)
        state.records.append(IterationRecord(
            state.k, len(state.observed), tuple(float(t) for t in theta), q, float(crit), float(dist),
            err, metric.value, time.perf_counter() - t0))
        state.k = k_next
        if checkpoint is not None:
            save_checkpoint(checkpoint, state, cfg)


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None


def run(map_fn: Callable, input_dist, cfg: SamplerConfig, *, reference: dens.DensityEstimate | None = None,
        checkpoint=None, callback=None, threads: int = 1) -> RunResult:
    """Run the sequential sampler from a fresh Latin hypercube design.

    ``reference`` enables the per-iteration error against a known pdf,
    ``checkpoint`` is a path rewritten after every iteration, and
    ``callback(k, f_n, f_plus, f_minus)`` sees every iteration's pdfs.
    ``threads`` parallelizes the swarm evaluations without changing results.
    """
    grid = quadrature_grid(input_dist, cfg.resolution)
    state = _initial_state(map_fn, input_dist, cfg)
    if checkpoint is not None:
        save_checkpoint(checkpoint, state, cfg)
    ex = _executor(threads)
    try:
        return _loop(state, map_fn, input_dist, cfg, grid, reference, checkpoint, callback, ex)
    finally:
        if ex is not None:
            ex.shutdown()


def resume(checkpoint_path, map_fn: Callable, input_dist, *, reference=None, callback=None,
           threads: int = 1, checkpoint=None) -> RunResult:
    """Continue a run from its checkpoint; results match an uninterrupted run."""
    state, cfg = load_checkpoint(checkpoint_path)
    if state.observed.dim != input_dist.dim:
        raise CorruptCheckpoint("checkpoint dimension does not match the input distribution")
    grid = quadrature_grid(input_dist, cfg.resolution)
    ex = _executor(threads)
    try:
        return _loop(state, map_fn, input_dist, cfg, grid, reference,
                     checkpoint if checkpoint is not None else checkpoint_path, callback, ex)
    finally:
        if ex is not None:
            ex.shutdown()


# checkpoints ----------------------------------------------------------------

def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def save_checkpoint(path, state: _State, cfg: SamplerConfig) -> None:
    gp = None
    if state.gp is not None:
        g = state.gp
        gp = {"prior_mean": g.prior_mean, "chol_factor": _floats(g.chol_factor),
              "whitened": _floats(g.whitened), "weights": _floats(g.weights)}
    hp = None
    if state.hyperparams is not None:
        h = state.hyperparams
        hp = {"signal_variance": h.signal_variance, "lengthscales": list(h.lengthscales), "jitter": h.jitter}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "iteration": state.k,
        "dataset": {"thetas": _floats(state.observed.thetas), "values": _floats(state.observed.values)},
        "hyperparams": hp,
        "gp": gp,
        "records": [asdict(r) for r in state.records],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[_State, SamplerConfig]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CorruptCheckpoint(f"checkpoint {path} does not exist") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path} is not a sampler checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(
            f"checkpoint version {doc.get('version')!r} is not supported (expected {CHECKPOINT_VERSION})")
    try:
        cfg = SamplerConfig.from_dict(doc["config"])
        ds = doc["dataset"]
        observed = Dataset(np.array(ds["thetas"], dtype=float), np.array(ds["values"], dtype=float))
        hp = None
        if doc["hyperparams"] is not None:
            h = doc["hyperparams"]
            hp = KernelHyperparams(h["signal_variance"], tuple(h["lengthscales"]), h["jitter"])
        gp = None
        if doc["gp"] is not None:
            g = doc["gp"]
            gp = GpPosterior(_gp_dataset(cfg, observed), hp, float(g["prior_mean"]),
                             np.array(g["chol_factor"], dtype=float), np.array(g["whitened"], dtype=float),
                             np.array(g["weights"], dtype=float))
        records = []
        for r in doc["records"]:
            r = dict(r)
            r["theta_chosen"] = tuple(r["theta_chosen"])
            records.append(IterationRecord(**r))
        state = _State(int(doc["iteration"]), observed, gp, hp, records)
    except (KeyError, TypeError, ValueError, InvalidConfig) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint {path}: {exc}") from None
    return state, cfg


# exports --------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_records(records: list[IterationRecord], path, dim: int) -> None:
    """Write records without timings so reruns produce identical bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "n_points", *[f"theta_{i + 1}" for i in range(dim)], "q_observed",
                    "criterion_value", "distance_fpm", "error_vs_oracle", "metric"])
        for r in records:
            w.writerow([r.index, r.n_points, *map(_fmt, r.theta_chosen), _fmt(r.q_observed),
                        _fmt(r.criterion_value), _fmt(r.distance_fpm), _fmt(r.error_vs_oracle), r.metric])


def write_timings(records: list[IterationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "wall_time"])
        for r in records:
            w.writerow([r.index, f"{r.wall_time:.6f}"])
