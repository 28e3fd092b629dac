"""Global-best particle swarm minimization over a box."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ObjectiveFailure

VELOCITY_CLAMP = 0.2


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 40
    iterations: int = 60
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.swarm_size < 2 or self.iterations < 1:
            raise ValueError("need swarm_size >= 2 and iterations >= 1")
        for c in (self.inertia, self.cognitive, self.social):
            if not 0 < c < 3:
                raise ValueError("PSO coefficients must lie in (0, 3)")
        if self.bounds is not None:
            b = tuple((float(lo), float(hi)) for lo, hi in np.asarray(self.bounds, dtype=float).reshape(-1, 2))
            if any(not (np.isfinite(lo) and np.isfinite(hi) and lo < hi) for lo, hi in b):
                raise ValueError(f"invalid bounds {self.bounds}")
            object.__setattr__(self, "bounds", b)

    def with_bounds(self, bounds) -> PsoConfig:
        return replace(self, bounds=tuple(map(tuple, np.asarray(bounds, dtype=float))))


def _reflect(x: np.ndarray, v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
    above = x > hi
    x[above] = 2 * hi[np.nonzero(above)[1]] - x[above]
    v[above] *= -1
    below = x < lo
    x[below] = 2 * lo[np.nonzero(below)[1]] - x[below]
    v[below] *= -1
    np.clip(x, lo, hi, out=x)


def _evaluate(objective, X: np.ndarray, executor) -> np.ndarray:
    def safe(x):
        try:
            y = float(objective(x))
        except Exception:  # noqa: BLE001 - any objective error counts as a failed evaluation
            return np.nan
        return y

    rows = [X[i].copy() for i in range(len(X))]
    vals = list(executor.map(safe, rows)) if executor is not None else [safe(r) for r in rows]
    vals = np.asarray(vals, dtype=float)
    if np.isnan(vals).sum() * 2 > len(vals):
        raise ObjectiveFailure(f"objective failed on {int(np.isnan(vals).sum())} of {len(vals)} particles")
    return np.where(np.isnan(vals), np.inf, vals)


def pso_minimize(objective, cfg: PsoConfig, *, executor=None, trace: list | None = None):
    """Minimize ``objective`` over ``cfg.bounds``; returns ``(theta_best, value_best)``.

    Velocities are clamped to 20% of the box extent per dimension and
    particles leaving the box are reflected back in. Evaluations within one
    iteration may run on ``executor``; results are consumed in particle order
    so the trajectory does not depend on it. If ``trace`` is a list, every
    evaluated swarm and the incumbent value are appended to it per iteration.
    """
    if cfg.bounds is None:
        raise ValueError("PsoConfig.bounds must be set")
    b = np.asarray(cfg.bounds, dtype=float)
    lo, hi = b[:, 0], b[:, 1]
    vmax = VELOCITY_CLAMP * (hi - lo)
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.swarm_size, len(b)

    x = lo + (hi - lo) * rng.random((n, d))
    v = vmax * rng.uniform(-1.0, 1.0, (n, d))
    f = _evaluate(objective, x, executor)
    pbest, pval = x.copy(), f.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    if trace is not None:
        trace.append((x.copy(), gval))

    for _ in range(cfg.iterations - 1):
        r1, r2 = rng.random((n, d)), rng.random((n, d))
        v = cfg.inertia * v + cfg.cognitive * r1 * (pbest - x) + cfg.social * r2 * (gbest - x)
        np.clip(v, -vmax, vmax, out=v)
        x = x + v
        _reflect(x, v, lo, hi)
        f = _evaluate(objective, x, executor)
        improved = f < pval
        pbest[improved], pval[improved] = x[improved], f[improved]
        g = int(np.argmin(pval))
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        if trace is not None:
            trace.append((x.copy(), gval))
    return gbest, gval
