"""Observables: travel time, experienced occupancy, velocity, outflow.

Works purely on event data produced by a run: the piecewise-constant
in-room head count N(t) and the (t_in, t_out) pair of every completed
passage.  All integrals over N(t) are closed-form sums over segments,
no quadrature.
"""

import bisect
from dataclasses import dataclass

from .population import AgentParams


class OccupancyTrace:
    """Piecewise-constant head count, stored as change-points (t, N).

    The first change-point defines the start of coverage; the last
    value extends to infinity.  A cumulative integral is precomputed so
    windowed means are O(log n).
    """

    def __init__(self, change_points: list[tuple[float, int]]):
        if not change_points:
            raise ValueError("trace needs at least one change-point")
        last_t = None
        for t, n in change_points:
            if n < 0:
                raise ValueError(f"negative head count {n} at t={t}")
            if last_t is not None and t <= last_t:
                raise ValueError("change-points must be strictly increasing in t")
            last_t = t
        self.times = [t for t, _ in change_points]
        self.counts = [n for _, n in change_points]
        # integral of N from times[0] up to each change-point
        self._cum = [0.0]
        for i in range(1, len(self.times)):
            seg = (self.times[i] - self.times[i - 1]) * self.counts[i - 1]
            self._cum.append(self._cum[-1] + seg)

    def value_at(self, t: float) -> int:
        i = bisect.bisect_right(self.times, t) - 1
        if i < 0:
            raise ValueError(f"t={t} before trace start {self.times[0]}")
        return self.counts[i]

    def integral_to(self, t: float) -> float:
        i = bisect.bisect_right(self.times, t) - 1
        if i < 0:
            raise ValueError(f"t={t} before trace start {self.times[0]}")
        return self._cum[i] + (t - self.times[i]) * self.counts[i]


@dataclass(frozen=True)
class PassageRecord:
    """One completed room traversal."""

    agent_id: int
    params: AgentParams
    t_in: float
    t_out: float
    tt: float
    n_mean: float


def compute_nmean(trace: OccupancyTrace, t_in: float, t_out: float) -> float:
    """Time average of N(t) over [t_in, t_out], exact for the step trace."""
    if t_out <= t_in:
        raise ValueError(f"need t_out > t_in, got [{t_in}, {t_out}]")
    return (trace.integral_to(t_out) - trace.integral_to(t_in)) / (t_out - t_in)


def free_flow_velocity(records: list[PassageRecord], path_length_m: float = 7.2,
                       max_occupancy: float = 4.0) -> float | None:
    """Mean walking speed of passages experienced at low occupancy.

    Speed of one passage is the room length over its travel time.  Only
    records with mean occupancy at most ``max_occupancy`` qualify;
    returns None when there are none.
    """
    speeds = [path_length_m / r.tt for r in records if r.n_mean <= max_occupancy]
    if not speeds:
        return None
    return sum(speeds) / len(speeds)


def outflow(egress_log: list[float], window: tuple[float, float]) -> float:
    """Egress rate in a half-open time window (lo, hi], in agents per second."""
    lo, hi = window
    if hi <= lo:
        raise ValueError(f"window must have positive length, got ({lo}, {hi})")
    count = sum(1 for t in egress_log if lo < t <= hi)
    return count / (hi - lo)


def relative_travel_time(records: list[PassageRecord], bin_width: int = 5,
                         min_bin_records: int = 5
                         ) -> list[tuple[PassageRecord, float | None]]:
    """Travel time of each record relative to its occupancy peers.

    Records are binned by ``n_mean`` into [0, w), [w, 2w), ...; each
    record's travel time is divided by the mean travel time of its bin.
    Bins with fewer than ``min_bin_records`` records give no meaningful
    reference, so their records come back unnormalized (None).
    """
    if bin_width < 1:
        raise ValueError(f"bin_width must be >= 1, got {bin_width}")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for r in records:
        b = int(r.n_mean // bin_width)
        sums[b] = sums.get(b, 0.0) + r.tt
        counts[b] = counts.get(b, 0) + 1
    means = {b: sums[b] / counts[b] for b in sums if counts[b] >= min_bin_records}
    out = []
    for r in records:
        b = int(r.n_mean // bin_width)
        mean_tt = means.get(b)
        out.append((r, r.tt / mean_tt if mean_tt is not None else None))
    return out
