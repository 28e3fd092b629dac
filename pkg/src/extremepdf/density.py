"""Pushforward densities of a map under the quadrature measure.

The pdf of ``q = T(theta)`` is computed by partitioning the co-domain into
bins and accumulating the quadrature mass of every node into the bin that
contains its map value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import NoOverlap

DEFAULT_BINS = 100
PAD_FRACTION = 0.01
FLOOR_REL = 1e-12
DEGENERATE_REL = 1e-14


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    bin_edges: np.ndarray  # (B + 1,) strictly increasing
    pdf: np.ndarray  # (B,)
    cdf: np.ndarray  # (B + 1,), cdf[0] is the mass below the first edge
    support_floor: float
    total_mass: float = 1.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bins(self) -> int:
        return len(self.pdf)

    def masses(self) -> np.ndarray:
        return self.pdf * self.widths

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_left", "s_right", "pdf", "cdf_right"])
            for row in zip(self.bin_edges[:-1], self.bin_edges[1:], self.pdf, self.cdf[1:]):
                w.writerow([format(x, ".17g") for x in row])

    @classmethod
    def from_csv(cls, path) -> DensityEstimate:
        rows = list(csv.reader(Path(path).read_text().splitlines()))
        if rows[0] != ["s_left", "s_right", "pdf", "cdf_right"]:
            raise ValueError(f"unexpected density header {rows[0]}")
        a = np.array(rows[1:], dtype=float).reshape(-1, 4)
        edges = np.r_[a[:, 0], a[-1, 1]]
        cdf0 = a[0, 3] - a[0, 2] * (a[0, 1] - a[0, 0])
        cdf = np.r_[max(cdf0, 0.0), a[:, 3]]
        return cls(edges, a[:, 2], cdf, FLOOR_REL * max(a[:, 2].max(), 0.0) or np.finfo(float).tiny)


def _weights(grid) -> np.ndarray:
    return np.asarray(grid.weights if hasattr(grid, "weights") else grid, dtype=float)


def padded_edges(lo: float, hi: float, bins: int = DEFAULT_BINS, pad: float = PAD_FRACTION) -> np.ndarray:
    p = pad * (hi - lo)
    return np.linspace(lo - p, hi + p, bins + 1)


def is_degenerate(lo: float, hi: float) -> bool:
    return hi - lo < DEGENERATE_REL * max(1.0, abs(lo), abs(hi))


def bin_masses(values: np.ndarray, weights: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Total weight of ``values`` falling in each half-open bin ``[e_i, e_{i+1})``.

    The last bin is closed on the right; values outside the edges are dropped.
    """
    B = len(edges) - 1
    lo, hi = edges[0], edges[-1]
    widths = np.diff(edges)
    if np.allclose(widths, widths[0], rtol=1e-12, atol=0):
        idx = np.floor((values - lo) * (B / (hi - lo))).astype(np.int64)
        idx[values == hi] = B - 1
    else:
        idx = np.searchsorted(edges, values, side="right") - 1
        idx[values == hi] = B - 1
    ok = (idx >= 0) & (idx < B)
    return np.bincount(idx[ok], weights=weights[ok], minlength=B)


def point_mass(value: float, total_mass: float = 1.0) -> DensityEstimate:
    h = 1e-9 * max(1.0, abs(value))
    edges = np.array([value - h, value + h])
    pdf = np.array([1.0 / (edges[1] - edges[0])])
    return DensityEstimate(edges, pdf, np.array([0.0, 1.0]), FLOOR_REL * pdf[0], total_mass)


def from_masses(masses: np.ndarray, edges: np.ndarray, total: float, below: float = 0.0,
                smooth: float = 0.0) -> DensityEstimate:
    if smooth > 0:
        inner = masses.sum()
        masses = gaussian_filter1d(masses, smooth, mode="constant")
        if masses.sum() > 0:
            masses = masses * (inner / masses.sum())
    widths = np.diff(edges)
    pdf = masses / (widths * total)
    cdf = np.r_[below, below + np.cumsum(masses)] / total
    peak = pdf.max() if len(pdf) else 0.0
    floor = FLOOR_REL * peak if peak > 0 else np.finfo(float).tiny
    return DensityEstimate(edges, pdf, cdf, floor, total)


def pushforward(map_values, grid, bins: int = DEFAULT_BINS, edges=None, smooth: float = 0.0) -> DensityEstimate:
    """Histogram density of ``map_values`` weighted by the quadrature weights.

    By default the edges span the value range padded by 1% on each side.
    ``edges`` overrides them; mass outside explicit edges still counts in the
    normalization. A constant map yields a single-bin point mass.
    """
    values = np.asarray(map_values, dtype=float).reshape(-1)
    w = _weights(grid)
    if len(values) != len(w):
        raise ValueError(f"{len(values)} map values for {len(w)} quadrature nodes")
    if bins < 10 and edges is None:
        raise ValueError("bins must be >= 10")
    total = float(w.sum())
    if edges is None:
        lo, hi = float(values.min()), float(values.max())
        if is_degenerate(lo, hi):
            return point_mass(0.5 * (lo + hi), total)
        edges = padded_edges(lo, hi, bins)
    edges = np.asarray(edges, dtype=float)
    masses = bin_masses(values, w, edges)
    below = float(w[values < edges[0]].sum())
    return from_masses(masses, edges, total, below, smooth)


def shared_bounds(plus_values: np.ndarray, minus_values: np.ndarray, weights: np.ndarray,
                  bins: int = DEFAULT_BINS, smooth: float = 0.0) -> tuple[DensityEstimate, DensityEstimate]:
    """Pushforwards of the two bound maps on one edge set covering both ranges."""
    lo = float(min(plus_values.min(), minus_values.min()))
    hi = float(max(plus_values.max(), minus_values.max()))
    if is_degenerate(lo, hi):
        pm = point_mass(0.5 * (lo + hi), float(weights.sum()))
        return pm, pm
    edges = padded_edges(lo, hi, bins)
    return (pushforward(plus_values, weights, edges=edges, smooth=smooth),
            pushforward(minus_values, weights, edges=edges, smooth=smooth))


def bound_values(mean: np.ndarray, sd: np.ndarray, alpha: float, transform=None):
    plus, minus = mean + alpha * sd, mean - alpha * sd
    if transform is not None:
        plus, minus = transform(plus), transform(minus)
    return plus, minus


def bound_pdfs(gp, grid, alpha: float = 1.96, bins: int = DEFAULT_BINS, transform=None,
               smooth: float = 0.0) -> tuple[DensityEstimate, DensityEstimate]:
    """Pdfs of ``T_n + alpha sigma_n`` and ``T_n - alpha sigma_n`` on shared edges.

    ``transform`` is applied to the bound maps before binning (``np.exp``
    when the surrogate models a log-observable).
    """
    from .gp import predict

    if alpha <= 0:
        raise ValueError("alpha must be positive")
    mean, var = predict(gp, grid.nodes)
    plus, minus = bound_values(mean, np.sqrt(var), alpha, transform)
    return shared_bounds(plus, minus, _weights(grid), bins, smooth)


def _check_shared(f: DensityEstimate, g: DensityEstimate) -> None:
    if f.bin_edges.shape != g.bin_edges.shape or not np.allclose(
        f.bin_edges, g.bin_edges, rtol=1e-12, atol=0
    ):
        raise ValueError("density estimates must share bin edges")


def log_l1_distance(f: DensityEstimate, g: DensityEstimate) -> float:
    """Half the L1 distance between log-pdfs over bins where both are supported."""
    _check_shared(f, g)
    floor = max(f.support_floor, g.support_floor)
    ok = (f.pdf > floor) & (g.pdf > floor)
    if not ok.any():
        raise NoOverlap("no bin where both densities exceed the support floor")
    return float(0.5 * np.sum(np.abs(np.log(f.pdf[ok]) - np.log(g.pdf[ok])) * f.widths[ok]))


def l2_distance(f: DensityEstimate, g: DensityEstimate) -> float:
    _check_shared(f, g)
    return float(0.5 * np.sum((f.pdf - g.pdf) ** 2 * f.widths))
