"""Motion, time and bimanual-coordination metrics for one trial.

Motion metrics are evaluated only on captured samples (annotated in use and
tracked) and never differentiate across a break in the captured data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np

from .chain import nearest_index
from .errors import ZeroDuration
from .intervals import Interval, IntervalSet, difference, duration, intersect, intersect_all
from .pose import NS_PER_MS, NS_PER_S, Trajectory
from .sync import AnnotationSet

DEFAULT_SMOOTH_WINDOW = 5
DEFAULT_SMOOTH_PASSES = 1
ASD_PAIR_MS = 20.0


@dataclass(frozen=True)
class MotionMetrics:
    avg_velocity: float | None
    avg_acceleration: float | None
    avg_jerk: float | None
    path_length: float
    npl_annotated: float | None = None
    npl_captured: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class TimeMetrics:
    t_usage: float
    t_track: float
    t_capt: float
    pct_captured: float | None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BimanualMetrics:
    asd: float | None
    bit_usage: float
    bit_track: float
    bit_capt: float
    coord_idx: float | None
    efficiency_idx: float | None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class InstrumentMetrics:
    motion: MotionMetrics
    time: TimeMetrics


@dataclass(frozen=True)
class MetricsReport:
    participant: str
    group: str
    trial: int
    instruments: Mapping[str, InstrumentMetrics] = field(default_factory=dict)
    pairs: Mapping[tuple[str, str], BimanualMetrics] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# smoothing and differentiation


def _moving_average_valid(x: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return x
    c = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    return (c[window:] - c[:-window]) / window


def _moving_average_same(x: np.ndarray, window: int) -> np.ndarray:
    """Centred average whose half-width shrinks symmetrically near the ends.

    End points are kept and straight lines pass through unchanged.
    """
    n = len(x)
    half = window // 2
    if half == 0 or n < 3:
        return x
    c = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    i = np.arange(n)
    k = np.minimum(half, np.minimum(i, n - 1 - i))
    return (c[i + k + 1] - c[i - k]) / (2 * k + 1)[:, None]


def smooth(x: np.ndarray, window: int, passes: int = 1, mode: Literal["valid", "same"] = "valid") -> np.ndarray:
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd integer, got {window}")
    f = _moving_average_valid if mode == "valid" else _moving_average_same
    for _ in range(passes):
        x = f(x, window)
    return x


def central_difference(x: np.ndarray, dt: float) -> np.ndarray:
    return (x[2:] - x[:-2]) / (2.0 * dt)


def stencil_length(window: int, passes: int) -> int:
    """Samples needed for one jerk value."""
    return passes * (window - 1) + 7


def captured_segments(traj: Trajectory, capt: IntervalSet) -> list[np.ndarray]:
    """Index arrays of contiguous trajectory samples lying inside ``capt``."""
    if not len(traj):
        return []
    inside = np.flatnonzero(capt.contains(traj.t))
    if not len(inside):
        return []
    period = np.median(np.diff(traj.t)) if len(traj) > 1 else 0
    breaks = (np.diff(inside) > 1) | (np.diff(traj.t[inside]) > 1.5 * period)
    cut = np.flatnonzero(breaks) + 1
    return np.split(inside, cut)


# ---------------------------------------------------------------------------


def motion_metrics(
    traj: Trajectory,
    capt: IntervalSet,
    smooth_window: int = DEFAULT_SMOOTH_WINDOW,
    smooth_passes: int = DEFAULT_SMOOTH_PASSES,
    t_usage: float | None = None,
    t_capt: float | None = None,
) -> MotionMetrics:
    """Time-weighted average speed, acceleration and jerk magnitudes plus path length.

    Derivatives are successive central differences of the moving-average
    smoothed positions, computed per captured segment. Segments shorter than
    the stencil are skipped and flagged. Path length sums consecutive
    distances of the smoothed positions inside each segment.
    """
    need = stencil_length(smooth_window, smooth_passes)
    sums = np.zeros(3)
    weights = np.zeros(3)
    path = 0.0
    skipped = 0
    for seg in captured_segments(traj, capt):
        x = traj.points[seg]
        if len(x) >= 2:
            xs = smooth(x, smooth_window, smooth_passes, mode="same")
            path += float(np.sum(np.linalg.norm(np.diff(xs, axis=0), axis=1)))
        if len(x) < need:
            skipped += 1
            continue
        dt = float(np.median(np.diff(traj.t[seg]))) / NS_PER_S
        xv = smooth(x, smooth_window, smooth_passes, mode="valid")
        v = central_difference(xv, dt)
        a = central_difference(v, dt)
        j = central_difference(a, dt)
        for k, d in enumerate((v, a, j)):
            sums[k] += np.linalg.norm(d, axis=1).sum() * dt
            weights[k] += len(d) * dt

    flags = []
    if skipped:
        flags.append(f"insufficient_samples:{skipped}")
    if weights[2] > 0:
        avg = [float(s / w) for s, w in zip(sums, weights)]
    else:
        avg = [None, None, None]
        flags.append("no_motion_samples")

    out = MotionMetrics(avg[0], avg[1], avg[2], path, flags=tuple(flags))
    if t_usage is not None and t_capt is not None:
        try:
            npl_a, npl_c = normalized_path_length(path, t_usage, t_capt)
            out = replace(out, npl_annotated=npl_a, npl_captured=npl_c)
        except ZeroDuration:
            out = replace(out, flags=out.flags + ("zero_duration",))
    return out


def normalized_path_length(path_length: float, t_usage: float, t_capt: float) -> tuple[float, float]:
    if t_usage <= 0 or t_capt <= 0:
        raise ZeroDuration(f"normalising by zero time (usage={t_usage}, captured={t_capt})")
    return path_length / t_usage, path_length / t_capt


def time_metrics(usage: IntervalSet, tracked: IntervalSet) -> TimeMetrics:
    t_usage = duration(usage)
    t_track = duration(tracked)
    capt = intersect(usage, tracked)
    t_capt = duration(capt)
    if usage.duration_ns > 0:
        return TimeMetrics(t_usage, t_track, t_capt, capt.duration_ns / usage.duration_ns)
    return TimeMetrics(t_usage, t_track, t_capt, None, ("zero_usage",))


def coordination_index(
    usage_bipolar: IntervalSet,
    usage_aspirator: IntervalSet,
    denominator: Literal["total", "alone"] = "total",
) -> float | None:
    """Share of aspirator use overlapped by bipolar use.

    ``"total"`` divides by all aspirator time (bounded to [0, 1]); ``"alone"``
    divides by aspirator time without the bipolar and is unbounded.
    """
    together = intersect(usage_bipolar, usage_aspirator).duration_ns
    if denominator == "total":
        denom = usage_aspirator.duration_ns
    elif denominator == "alone":
        denom = difference(usage_aspirator, usage_bipolar).duration_ns
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    if denom == 0:
        return None
    return together / denom


def efficiency_index(usage_aspirator: IntervalSet, trial_span: Interval) -> float | None:
    span_ns = trial_span.end - trial_span.start
    if span_ns <= 0:
        return None
    clipped = intersect(usage_aspirator, IntervalSet([trial_span]))
    return clipped.duration_ns / span_ns


def trial_span(ann: AnnotationSet) -> Interval | None:
    """First annotated start to last annotated end across instruments."""
    return ann.all_usage().span


def separation_distance(
    traj_a: Trajectory,
    traj_b: Trajectory,
    window: IntervalSet,
    pair_ms: float = ASD_PAIR_MS,
) -> float | None:
    """Mean tip distance over mutually-nearest sample pairs inside ``window``."""
    if not len(traj_a) or not len(traj_b):
        return None
    tol = pair_ms * NS_PER_MS
    j = nearest_index(traj_b.t, traj_a.t, tol)
    i = np.flatnonzero(j >= 0)
    j = j[i]
    back = nearest_index(traj_a.t, traj_b.t[j], tol)
    mutual = back == i
    i, j = i[mutual], j[mutual]
    ok = window.contains(traj_a.t[i]) & window.contains(traj_b.t[j])
    i, j = i[ok], j[ok]
    if not len(i):
        return None
    d = np.linalg.norm(traj_a.points[i] - traj_b.points[j], axis=1)
    return float(d.mean())


def bimanual_metrics(
    traj_a: Trajectory,
    traj_b: Trajectory,
    usage_a: IntervalSet,
    usage_b: IntervalSet,
    tracked_a: IntervalSet,
    tracked_b: IntervalSet,
    trial_span: Interval | None,
    annotations: AnnotationSet | None = None,
    asd_mode: Literal["capt", "track"] = "capt",
    coord_denominator: Literal["total", "alone"] = "total",
    pair_ms: float = ASD_PAIR_MS,
) -> BimanualMetrics:
    """Pair metrics for the dominant (``a``) and non-dominant (``b``) instruments.

    CoordIdx and EI come from the bipolar and aspirator annotations alone;
    without ``annotations`` they are left undefined.
    """
    flags = []
    bi_usage = intersect(usage_a, usage_b)
    bi_track = intersect(tracked_a, tracked_b)
    bi_capt = intersect_all(usage_a, usage_b, tracked_a, tracked_b)

    window = bi_capt if asd_mode == "capt" else bi_track
    asd = separation_distance(traj_a, traj_b, window, pair_ms)
    if asd is None:
        flags.append("empty_pairing")

    coord = eff = None
    if annotations is not None:
        coord = coordination_index(annotations["bipolar"], annotations["aspirator"], coord_denominator)
        if coord is None:
            flags.append("zero_aspirator_usage")
        if trial_span is not None:
            eff = efficiency_index(annotations["aspirator"], trial_span)
    if eff is None:
        flags.append("no_trial_span" if annotations is not None else "no_annotations")

    return BimanualMetrics(
        asd,
        duration(bi_usage),
        duration(bi_track),
        duration(bi_capt),
        coord,
        eff,
        tuple(flags),
    )
