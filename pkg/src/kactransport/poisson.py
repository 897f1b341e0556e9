"""Rate-2 master Poisson process and its two fair thinnings N and N'.

At each event of the master process M, the counters N and N' each jump
with probability 1/2, independently of each other and of the past.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from kactransport.ensemble import blocks, parallel_map
from kactransport.report import Entry, skipped
from kactransport.rng import RandomStream, SeedSpec, stream_id

MASTER_RATE = 2.0
COUNTERS = ("N", "Nprime", "M")


def _batch_size(horizon: float) -> int:
    mean = MASTER_RATE * horizon
    return int(math.ceil(mean + 6.0 * math.sqrt(mean) + 10.0))


def _check_horizon(horizon: float):
    if not math.isfinite(horizon) or horizon < 0:
        raise ValueError(f"horizon must be finite and non-negative, got {horizon}")


@dataclass(frozen=True)
class JumpSkeleton:
    """Master event times with per-event jump marks for N and N'.

    Immutable once built; arrays are marked read-only so a skeleton can be
    shared between threads.
    """

    horizon: float
    event_times: np.ndarray
    jumps_N: np.ndarray
    jumps_Nprime: np.ndarray
    _cum: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.event_times, dtype=float)
        a = np.asarray(self.jumps_N, dtype=bool)
        b = np.asarray(self.jumps_Nprime, dtype=bool)
        _check_horizon(self.horizon)
        if t.ndim != 1 or a.shape != t.shape or b.shape != t.shape:
            raise ValueError("event_times and marks must be 1-D arrays of equal length")
        if t.size and (t[0] <= 0 or t[-1] > self.horizon or np.any(np.diff(t) <= 0)):
            raise ValueError("event times must be strictly increasing in (0, horizon]")
        for name, arr in (("event_times", t), ("jumps_N", a), ("jumps_Nprime", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cum = {
            "M": np.arange(1, t.size + 1),
            "N": np.cumsum(a, dtype=np.int64),
            "Nprime": np.cumsum(b, dtype=np.int64),
        }
        for arr in cum.values():
            arr.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    def __len__(self):
        return self.event_times.size

    def counts_after_event(self, which: str) -> np.ndarray:
        """Counter value just after each master event (read-only view)."""
        if which not in COUNTERS:
            raise ValueError(f"unknown counter {which!r}; expected one of {COUNTERS}")
        return self._cum[which]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "jump_N", "jump_Nprime"])
            for t, a, b in zip(self.event_times, self.jumps_N, self.jumps_Nprime):
                w.writerow([repr(float(t)), int(a), int(b)])


def _interarrivals(stream: RandomStream, horizon: float, shape_rows: int | None):
    """Event times (1-D, or 2-D with ``shape_rows`` rows) covering ``horizon``.

    Returned times are strictly increasing along the last axis and
    the final column exceeds ``horizon`` for every row.
    """
    k = _batch_size(horizon)
    size = (k,) if shape_rows is None else (shape_rows, k)
    gaps = stream.exponential(MASTER_RATE, size)
    while True:
        times = np.cumsum(gaps, axis=-1)
        # an inter-arrival lost to rounding would create a tied event: redraw it
        prev = np.concatenate([np.zeros(times.shape[:-1] + (1,)), times[..., :-1]], axis=-1)
        tied = times <= prev
        if tied.any():
            gaps[tied] = stream.exponential(MASTER_RATE, int(tied.sum()))
            continue
        if np.all(times[..., -1] > horizon):
            return times
        more = stream.exponential(MASTER_RATE, size)
        gaps = np.concatenate([gaps, more], axis=-1)


def simulate_master(horizon: float, stream: RandomStream) -> JumpSkeleton:
    """Simulate M on ``(0, horizon]`` and thin it into N and N'."""
    _check_horizon(horizon)
    if horizon == 0:
        empty = np.empty(0)
        return JumpSkeleton(0.0, empty, empty.astype(bool), empty.astype(bool))
    times = _interarrivals(stream, horizon, None)
    times = times[times <= horizon]
    jumps_n = stream.bernoulli(0.5, times.size)
    jumps_np = stream.bernoulli(0.5, times.size)
    return JumpSkeleton(float(horizon), times, jumps_n, jumps_np)


def count_at(skeleton: JumpSkeleton, which: str, t: float) -> int:
    """Right-continuous counter value at time ``t``."""
    if not 0 <= t <= skeleton.horizon:
        raise ValueError(f"t={t} outside [0, {skeleton.horizon}]")
    cum = skeleton.counts_after_event(which)
    i = int(np.searchsorted(skeleton.event_times, t, side="right"))
    return 0 if i == 0 else int(cum[i - 1])


# --- vectorised ensembles of increments ---------------------------------

def simulate_increments(intervals, n: int, stream: RandomStream) -> dict:
    """Increments of N, N' and M over each ``(a, b]`` in ``intervals`` for ``n`` replications.

    Uses the same construction as :func:`simulate_master` (exponential
    inter-arrivals, one pair of fair marks per master event), laid out as an
    ``n x K`` matrix. Returns ``{"N": (n, len(intervals)), "Nprime": ..., "M": ...}``.
    """
    intervals = [(float(a), float(b)) for a, b in intervals]
    horizon = max(b for _, b in intervals)
    times = _interarrivals(stream, horizon, n)
    jn = stream.bernoulli(0.5, times.shape)
    jnp = stream.bernoulli(0.5, times.shape)
    out = {c: np.empty((n, len(intervals)), dtype=np.int64) for c in COUNTERS}
    for i, (a, b) in enumerate(intervals):
        inside = (times > a) & (times <= b)
        out["M"][:, i] = inside.sum(axis=1)
        out["N"][:, i] = (inside & jn).sum(axis=1)
        out["Nprime"][:, i] = (inside & jnp).sum(axis=1)
    return out


def _increments_block(task):
    seed, tag, (start, stop), intervals = task
    stream = RandomStream(SeedSpec(seed, stream_id(tag, start // INCREMENT_BLOCK)))
    return simulate_increments(intervals, stop - start, stream)


INCREMENT_BLOCK = 10_000


def increment_ensemble(intervals, n: int, seed: int, tag: str, jobs: int = 1) -> dict:
    """Blocked, worker-count-independent version of :func:`simulate_increments`."""
    tasks = [(seed, tag, blk, list(intervals)) for blk in blocks(n, INCREMENT_BLOCK)]
    parts = parallel_map(_increments_block, tasks, jobs)
    return {c: np.concatenate([p[c] for p in parts]) for c in COUNTERS}


# --- distributional checks ------------------------------------------------

def pool_tail(counts: np.ndarray, probs: np.ndarray, min_expected: float = 5.0):
    """Merge upper categories until every expected count is at least ``min_expected``."""
    counts = list(counts)
    probs = list(probs)
    n = sum(counts)
    while len(probs) > 2 and probs[-1] * n < min_expected:
        last_count, last_prob = counts.pop(), probs.pop()
        counts[-1] += last_count
        probs[-1] += last_prob
    return np.array(counts, dtype=float), np.array(probs)


def poisson_chisquare(samples: np.ndarray, mean: float):
    """Chi-square goodness of fit of integer samples against Poisson(mean)."""
    samples = np.asarray(samples)
    kmax = int(samples.max()) if samples.size else 0
    observed = np.bincount(samples, minlength=kmax + 1).astype(float)
    ks = np.arange(kmax + 1)
    probs = stats.poisson.pmf(ks, mean)
    probs[-1] = stats.poisson.sf(kmax - 1, mean)  # last cell absorbs the tail
    observed, probs = pool_tail(observed, probs)
    chi2, p = stats.chisquare(observed, probs * samples.size)
    return float(chi2), float(p)


def _pooled_codes(x: np.ndarray, cap: int) -> np.ndarray:
    return np.minimum(x, cap)


def contingency_chisquare(x: np.ndarray, y: np.ndarray, min_expected: float = 5.0):
    """Chi-square independence test for two integer samples, pooling sparse upper values.

    Returns ``(statistic, p_value, dof)``; ``p_value`` is None when either
    variable is constant.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n = x.size
    cx, cy = int(x.max()), int(y.max())
    while True:
        px = np.bincount(_pooled_codes(x, cx), minlength=cx + 1)
        py = np.bincount(_pooled_codes(y, cy), minlength=cy + 1)
        px, py = px[px > 0], py[py > 0]
        if px.size < 2 or py.size < 2:
            return None, None, 0
        if px.min() * py.min() / n >= min_expected:
            break
        # shrink whichever variable has the sparser smallest category
        if px.min() <= py.min():
            cx -= 1
        else:
            cy -= 1
    table = np.zeros((cx + 1, cy + 1))
    np.add.at(table, (_pooled_codes(x, cx), _pooled_codes(y, cy)), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    chi2, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return float(chi2), float(p), int(dof)


def disjoint_increment_independence_test(
    first: tuple[float, float],
    second: tuple[float, float],
    n: int,
    seed: int,
    counters: tuple[str, str] = ("N", "Nprime"),
    alpha: float = 0.01,
    require_disjoint: bool = True,
    jobs: int = 1,
    name: str | None = None,
) -> Entry:
    """Chi-square independence of (first-counter increment on ``first``, second-counter increment on ``second``).

    With ``require_disjoint=False`` the intervals may overlap; this is only
    meant for power controls (e.g. N against M on the same interval), whose
    entry passes when independence is rejected.
    """
    (s, t), (u, v) = first, second
    if s > t or u > v:
        raise ValueError("interval endpoints must be ordered")
    if require_disjoint and not t < u:
        raise ValueError(f"intervals [{s},{t}] and [{u},{v}] are not disjoint (need t < u)")
    name = name or f"poisson_independence_{counters[0]}[{s},{t}]_{counters[1]}[{u},{v}]"
    if s == t or u == v:
        return skipped(name, "degenerate", n, seed)
    inc = increment_ensemble([first, second], n, seed, f"poisson-indep-{s}-{t}-{u}-{v}", jobs)
    x = inc[counters[0]][:, 0]
    y = inc[counters[1]][:, 1]
    chi2, p, dof = contingency_chisquare(x, y)
    if p is None:
        return skipped(name, "degenerate", n, seed)
    comparison = "p_ge" if require_disjoint else "p_lt"
    return Entry(name, chi2, None, alpha, comparison, n, seed, p_value=p, detail=f"dof={dof}")
