"""Normalised sets of half-open time intervals on integer nanoseconds.

Intervals are stored as ``[start, end)``; touching or overlapping members
are merged on construction so equal sets compare equal.
"""

from __future__ import annotations

from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .pose import NS_PER_MS, NS_PER_S, DEFAULT_GAP_MS, DEFAULT_RATE_HZ, Trajectory, split_runs


class Interval(NamedTuple):
    start: int
    end: int

    @property
    def duration_ns(self) -> int:
        return self.end - self.start


class IntervalSet:
    __slots__ = ("_iv",)

    def __init__(self, intervals: Iterable = ()):
        self._iv: tuple[Interval, ...] = _normalize(intervals)

    @classmethod
    def from_seconds(cls, pairs: Iterable[tuple[float, float]]) -> IntervalSet:
        return cls((int(round(a * NS_PER_S)), int(round(b * NS_PER_S))) for a, b in pairs)

    @classmethod
    def _raw(cls, intervals: tuple[Interval, ...]) -> IntervalSet:
        out = cls.__new__(cls)
        out._iv = intervals
        return out

    @property
    def intervals(self) -> tuple[Interval, ...]:
        return self._iv

    def __iter__(self) -> Iterator[Interval]:
        return iter(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._iv == other._iv

    def __hash__(self) -> int:
        return hash(self._iv)

    def __repr__(self) -> str:
        body = ", ".join(f"[{a}, {b})" for a, b in self._iv)
        return f"IntervalSet({body})"

    def __and__(self, other: IntervalSet) -> IntervalSet:
        return intersect(self, other)

    def __or__(self, other: IntervalSet) -> IntervalSet:
        return union(self, other)

    @property
    def duration_ns(self) -> int:
        return sum(iv.end - iv.start for iv in self._iv)

    @property
    def span(self) -> Interval | None:
        if not self._iv:
            return None
        return Interval(self._iv[0].start, self._iv[-1].end)

    def shift(self, offset_ns: int) -> IntervalSet:
        return IntervalSet._raw(tuple(Interval(a + offset_ns, b + offset_ns) for a, b in self._iv))

    def contains(self, t) -> np.ndarray:
        """Membership mask for timestamps ``t`` (closed at both ends)."""
        t = np.asarray(t, dtype=np.int64)
        if not self._iv:
            return np.zeros(t.shape, dtype=bool)
        starts = np.array([iv.start for iv in self._iv], dtype=np.int64)
        ends = np.array([iv.end for iv in self._iv], dtype=np.int64)
        k = np.searchsorted(starts, t, side="right") - 1
        ok = k >= 0
        kk = np.where(ok, k, 0)
        return ok & (t <= ends[kk])


def _normalize(intervals: Iterable) -> tuple[Interval, ...]:
    items = []
    for iv in intervals:
        a, b = int(iv[0]), int(iv[1])
        if b > a:
            items.append((a, b))
    items.sort()
    out: list[list[int]] = []
    for a, b in items:
        if out and a <= out[-1][1]:
            if b > out[-1][1]:
                out[-1][1] = b
        else:
            out.append([a, b])
    return tuple(Interval(a, b) for a, b in out)


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    out = []
    x, y = a.intervals, b.intervals
    i = j = 0
    while i < len(x) and j < len(y):
        lo = max(x[i].start, y[j].start)
        hi = min(x[i].end, y[j].end)
        if lo < hi:
            out.append(Interval(lo, hi))
        if x[i].end < y[j].end:
            i += 1
        else:
            j += 1
    # pieces of disjoint inputs can touch only at shared endpoints
    return IntervalSet(out)


def union(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return IntervalSet(a.intervals + b.intervals)


def intersect_all(*sets: IntervalSet) -> IntervalSet:
    out = sets[0]
    for s in sets[1:]:
        out = intersect(out, s)
    return out


def duration(s: IntervalSet) -> float:
    """Total length in seconds, summed exactly in nanoseconds first."""
    return s.duration_ns / NS_PER_S


def tracked_intervals(
    traj: Trajectory,
    gap_threshold_ms: float = DEFAULT_GAP_MS,
    rate_hz: float = DEFAULT_RATE_HZ,
) -> IntervalSet:
    """Spans of consecutive samples whose gaps stay within the threshold.

    A run ``[first, last]`` becomes one interval; a lone sample counts as
    one nominal frame period.
    """
    period = int(round(NS_PER_S / rate_hz))
    out = []
    for run in split_runs(traj.t, gap_threshold_ms * NS_PER_MS):
        a, b = int(traj.t[run.start]), int(traj.t[run.stop - 1])
        out.append((a, b if b > a else a + period))
    return IntervalSet(out)


def difference(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    """Parts of ``a`` not covered by ``b``."""
    out = []
    y = b.intervals
    j = 0
    for start, end in a.intervals:
        cur = start
        while j < len(y) and y[j].end <= cur:
            j += 1
        k = j
        while k < len(y) and y[k].start < end:
            if y[k].start > cur:
                out.append((cur, y[k].start))
            cur = max(cur, y[k].end)
            if cur >= end:
                break
            k += 1
        if cur < end:
            out.append((cur, end))
    return IntervalSet(out)
