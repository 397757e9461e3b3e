"""Statistics layer: hinge regression of travel time, quantiles, histograms.

The travel-time model is linear with a single fixed breakpoint:
``tt = intercept + slope * max(n - breakpoint, 0) + noise``.  With the
breakpoint fixed the model is linear in its two parameters, so the fit
is the closed-form least-squares solution; no iterative solver.

Quantile conventions (also recorded in the output manifest): the
travel-time curves use nearest-rank quantiles, the box summaries use
linearly interpolated quartiles with the 1.5*IQR outlier rule.
"""

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class PiecewiseFit:
    """Least-squares estimate of the hinge travel-time model."""

    label: Hashable
    intercept: float
    slope: float
    breakpoint: float
    r2: float
    n_records: int
    intercept_only: bool = False


def fit_piecewise(n_means: Sequence[float], tts: Sequence[float],
                  breakpoint: float = 7.0, label: Hashable = None) -> PiecewiseFit:
    """Fit ``tt = a + b * max(n_mean - breakpoint, 0)`` by least squares.

    Needs at least 3 records.  When no record lies above the breakpoint
    (or all regressor values coincide) the slope is undetermined and an
    intercept-only fit is returned, flagged.
    """
    x = np.asarray(n_means, dtype=float)
    y = np.asarray(tts, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("n_means and tts must be 1-d and equally long")
    n = len(x)
    if n < 3:
        raise ValueError(f"need at least 3 records, got {n}")
    z = np.maximum(x - breakpoint, 0.0)
    sst = float(np.sum((y - y.mean()) ** 2))
    if np.all(z == z[0]):
        a = float(y.mean())
        return PiecewiseFit(label=label, intercept=a, slope=0.0,
                            breakpoint=breakpoint, r2=1.0 if sst == 0.0 else 0.0,
                            n_records=n, intercept_only=True)
    zc = z - z.mean()
    b = float(np.dot(zc, y - y.mean()) / np.dot(zc, zc))
    a = float(y.mean() - b * z.mean())
    sse = float(np.sum((y - a - b * z) ** 2))
    r2 = 1.0 if sst == 0.0 else 1.0 - sse / sst
    return PiecewiseFit(label=label, intercept=a, slope=b, breakpoint=breakpoint,
                        r2=r2, n_records=n)


def fit_sse(fit: PiecewiseFit, n_means: Sequence[float], tts: Sequence[float]) -> float:
    """Sum of squared residuals of a fit on (possibly other) data."""
    x = np.asarray(n_means, dtype=float)
    y = np.asarray(tts, dtype=float)
    z = np.maximum(x - fit.breakpoint, 0.0)
    return float(np.sum((y - fit.intercept - fit.slope * z) ** 2))


def weighted_mean_r2(fits: Iterable[PiecewiseFit]) -> float:
    """R^2 averaged over fits, weighted by their record counts."""
    fits = list(fits)
    if not fits:
        raise ValueError("no fits given")
    total = sum(f.n_records for f in fits)
    return sum(f.n_records * f.r2 for f in fits) / total


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Classic nearest-rank quantile: the ceil(q*n)-th smallest value."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    rank = math.ceil(q * len(ordered))
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class QuantileRow:
    occupancy: int
    n_records: int
    q10: float
    q50: float
    q90: float
    mean: float
    undersized: bool


@dataclass(frozen=True)
class QuantileSeries:
    """Travel-time spread per occupancy level plus per-group mean curves."""

    rows: tuple[QuantileRow, ...]
    group_means: dict[tuple[Hashable, int], float] = field(default_factory=dict)
    group_counts: dict[tuple[Hashable, int], int] = field(default_factory=dict)


def quantile_curves(entries: Iterable[tuple[int, float, Hashable]],
                    min_records: int = 10) -> QuantileSeries:
    """Pool records per occupancy level and summarize their travel times.

    ``entries`` are (occupancy, travel time, group key) triples; the
    group key (e.g. the agent's property triple) feeds the per-group
    mean curves.  Levels with fewer than ``min_records`` records are
    flagged undersized.
    """
    by_n: dict[int, list[float]] = {}
    group_sums: dict[tuple[Hashable, int], float] = {}
    group_counts: dict[tuple[Hashable, int], int] = {}
    for occ, tt, key in entries:
        by_n.setdefault(occ, []).append(tt)
        gk = (key, occ)
        group_sums[gk] = group_sums.get(gk, 0.0) + tt
        group_counts[gk] = group_counts.get(gk, 0) + 1
    rows = []
    for occ in sorted(by_n):
        tts = by_n[occ]
        rows.append(QuantileRow(
            occupancy=occ,
            n_records=len(tts),
            q10=nearest_rank_quantile(tts, 0.10),
            q50=nearest_rank_quantile(tts, 0.50),
            q90=nearest_rank_quantile(tts, 0.90),
            mean=sum(tts) / len(tts),
            undersized=len(tts) < min_records,
        ))
    group_means = {gk: group_sums[gk] / group_counts[gk] for gk in group_sums}
    return QuantileSeries(rows=tuple(rows), group_means=group_means,
                          group_counts=group_counts)


def histogram(values: Sequence[float], bin_edges: Sequence[float]) -> np.ndarray:
    """Counts normalized to total mass 1, with under/overflow bins.

    Returns an array of length ``len(bin_edges) + 1``: index 0 collects
    values below the first edge, the last index values at or above the
    last edge, and index i the half-open bin [edges[i-1], edges[i]).
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing, length >= 2")
    vals = np.asarray(values, dtype=float)
    counts = np.zeros(len(edges) + 1, dtype=float)
    if len(vals) == 0:
        return counts
    idx = np.searchsorted(edges, vals, side="right")
    np.add.at(counts, idx, 1.0)
    return counts / len(vals)


@dataclass(frozen=True)
class BoxplotSummary:
    """Five-number box summary with 1.5*IQR whiskers."""

    whisker_lo: float
    q25: float
    median: float
    q75: float
    whisker_hi: float
    outliers: tuple[float, ...]
    n: int


def boxplot_summary(values: Sequence[float], min_values: int = 5) -> BoxplotSummary:
    """Box-plot summary of per-run statistics (linear-interpolation quartiles)."""
    vals = sorted(float(v) for v in values)
    if len(vals) < min_values:
        raise ValueError(f"need at least {min_values} values, got {len(vals)}")
    q25, q50, q75 = (float(q) for q in np.percentile(vals, [25, 50, 75]))
    iqr = q75 - q25
    lo_fence = q25 - 1.5 * iqr
    hi_fence = q75 + 1.5 * iqr
    inside = [v for v in vals if lo_fence <= v <= hi_fence]
    outliers = tuple(v for v in vals if v < lo_fence or v > hi_fence)
    return BoxplotSummary(
        whisker_lo=inside[0], q25=q25, median=q50, q75=q75,
        whisker_hi=inside[-1], outliers=outliers, n=len(vals))
