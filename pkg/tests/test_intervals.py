import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import runs, timeline, tracked_runs
from kinemetrics.intervals import (
    Interval,
    IntervalSet,
    difference,
    duration,
    intersect,
    intersect_all,
    tracked_intervals,
    union,
)
from kinemetrics.pose import Trajectory

MS = 1_000_000
HORIZON_MS = 2000

raw_intervals = st.lists(
    st.tuples(st.integers(0, HORIZON_MS), st.integers(0, HORIZON_MS)).map(lambda ab: (min(ab), max(ab))),
    max_size=12,
)


def ns_set(pairs_ms):
    return IntervalSet((a * MS, b * MS) for a, b in pairs_ms)


def ms_pairs(s: IntervalSet):
    assert all(a % MS == 0 and b % MS == 0 for a, b in s)
    return [(a // MS, b // MS) for a, b in s]


def random_pairs(rng):
    n = int(rng.integers(0, 12))
    a = rng.integers(0, HORIZON_MS, size=n)
    b = a + rng.integers(0, 300, size=n)
    return [(int(x), int(min(y, HORIZON_MS))) for x, y in zip(a, b)]


# --- examples -------------------------------------------------------------


def test_examples():
    assert ns_set([(0, 10)]) & ns_set([(5, 15)]) == ns_set([(5, 10)])
    assert not (ns_set([(0, 5)]) & ns_set([(6, 9)]))
    assert duration(IntervalSet()) == 0
    s = IntervalSet.from_seconds([(0, 10), (20, 30)])
    assert duration(s) == 20.0


def test_touching_intervals_merge():
    assert IntervalSet([(0, 5), (5, 9)]).intervals == (Interval(0, 9),)
    assert IntervalSet([(3, 3), (7, 2)]).intervals == ()


def test_shift_and_span():
    s = IntervalSet([(10, 20), (30, 40)])
    assert s.shift(5) == IntervalSet([(15, 25), (35, 45)])
    assert s.span == Interval(10, 40)
    assert IntervalSet().span is None


def test_contains_closed_ends():
    s = IntervalSet([(10, 20)])
    assert list(s.contains([9, 10, 15, 20, 21])) == [False, True, True, True, False]
    assert not IntervalSet().contains([1]).any()


# --- oracle equivalence ------------------------------------------------------


def test_200_random_cases_match_boolean_timeline(rng):
    for _ in range(200):
        pa, pb, pc = random_pairs(rng), random_pairs(rng), random_pairs(rng)
        a, b, c = ns_set(pa), ns_set(pb), ns_set(pc)
        ta, tb, tc = (timeline(p, HORIZON_MS) for p in (pa, pb, pc))
        for result, cells in (
            (intersect(a, b), ta & tb),
            (union(a, b), ta | tb),
            (difference(a, b), ta & ~tb),
            (intersect_all(a, b, c), ta & tb & tc),
            (a, ta),
        ):
            assert ms_pairs(result) == runs(cells)
            assert result.duration_ns == int(cells.sum()) * MS


@given(raw_intervals, raw_intervals)
def test_algebra_matches_timeline_property(pa, pb):
    a, b = ns_set(pa), ns_set(pb)
    ta, tb = timeline(pa, HORIZON_MS), timeline(pb, HORIZON_MS)
    assert ms_pairs(a & b) == runs(ta & tb)
    assert ms_pairs(a | b) == runs(ta | tb)
    assert ms_pairs(difference(a, b)) == runs(ta & ~tb)


@given(raw_intervals, raw_intervals)
def test_intersection_duration_bound(pa, pb):
    a, b = ns_set(pa), ns_set(pb)
    assert (a & b).duration_ns <= min(a.duration_ns, b.duration_ns)


@given(raw_intervals, raw_intervals, raw_intervals)
def test_algebraic_laws(pa, pb, pc):
    a, b, c = ns_set(pa), ns_set(pb), ns_set(pc)
    assert a & b == b & a
    assert a | b == b | a
    assert (a & b) & c == a & (b & c)
    assert a & (b | c) == (a & b) | (a & c)


@given(raw_intervals)
def test_normalization_idempotent(pa):
    s = ns_set(pa)
    assert IntervalSet(s.intervals) == s
    iv = s.intervals
    assert all(x.end < y.start for x, y in zip(iv, iv[1:]))
    assert all(x.start < x.end for x in iv)


@given(raw_intervals, st.integers(-10**12, 10**12))
def test_shift_preserves_duration(pa, offset):
    s = ns_set(pa)
    moved = s.shift(offset)
    assert moved.duration_ns == s.duration_ns
    assert len(moved) == len(s)


# --- tracked intervals -----------------------------------------------------------


def test_continuous_samples_one_interval():
    t = np.arange(1001) * 10 * MS
    s = tracked_intervals(Trajectory(t, np.zeros((len(t), 3))))
    assert s == IntervalSet([(0, 10 * 1000 * MS)])


def test_hole_gives_two_intervals():
    t = np.r_[np.arange(100), np.arange(300, 400)] * 10 * MS
    assert len(tracked_intervals(Trajectory(t, np.zeros((len(t), 3))))) == 2


def test_singleton_gets_one_frame():
    s = tracked_intervals(Trajectory([5 * MS], np.zeros((1, 3))), 150, 100)
    assert s == IntervalSet([(5 * MS, 15 * MS)])


def test_tracked_matches_run_length_scan(rng):
    for _ in range(100):
        keep = rng.random(2000) > rng.uniform(0.05, 0.6)
        t = (np.flatnonzero(keep) * 10 * MS).astype(np.int64)
        if not len(t):
            continue
        got = tracked_intervals(Trajectory(t, np.zeros((len(t), 3))), 150.0, 100.0)
        assert got == IntervalSet(tracked_runs(t, 150 * MS, 10 * MS))


def test_capt_bounds_property(rng):
    for _ in range(200):
        usage = ns_set(random_pairs(rng))
        tracked = ns_set(random_pairs(rng))
        capt = usage & tracked
        assert duration(capt) <= duration(usage)
        assert duration(capt) <= duration(tracked)


@pytest.mark.parametrize("pairs", [[], [(0, 1)], [(0, 5), (10, 20), (30, 31)]])
def test_duration_is_direct_sum(pairs):
    s = IntervalSet((a * MS, b * MS) for a, b in pairs)
    assert duration(s) == sum(b - a for a, b in pairs) / 1000
