"""Instrument-use annotations and video-to-tracking synchronisation.

Annotations are authored on the video timeline. The session starts with the
bipolar and aspirator tips touching; finding that contact in the tracking
data and pairing it with the annotated contact frame gives the offset
``tracking_time = video_time + offset``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from .chain import pair_samples
from .errors import NoContactDetected, UnderflowBeforeEpoch
from .intervals import IntervalSet, union
from .pose import DEFAULT_GAP_MS, NS_PER_MS, Trajectory

INSTRUMENTS = ("bipolar", "aspirator", "scissors")

CONTACT_THRESHOLD_MM = 5.0
CONTACT_MIN_HOLD_MS = 500.0
CONTACT_PAIR_MS = 20.0


@dataclass(frozen=True)
class AnnotationSet:
    usage: Mapping[str, IntervalSet] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.usage) - set(INSTRUMENTS)
        if unknown:
            raise ValueError(f"unknown instruments: {sorted(unknown)}")

    def __getitem__(self, instrument: str) -> IntervalSet:
        return self.usage.get(instrument, IntervalSet())

    def instruments(self) -> list[str]:
        return [i for i in INSTRUMENTS if i in self.usage]

    def all_usage(self) -> IntervalSet:
        out = IntervalSet()
        for s in self.usage.values():
            out = union(out, s)
        return out


@dataclass(frozen=True)
class SyncOffset:
    offset: int
    contact_time_tracking: int
    confidence: Literal["detected", "manual"]


def detect_contact_sync(
    traj_a: Trajectory,
    traj_b: Trajectory,
    video_contact_ns: int = 0,
    threshold_mm: float = CONTACT_THRESHOLD_MM,
    min_hold_ms: float = CONTACT_MIN_HOLD_MS,
    pair_ms: float = CONTACT_PAIR_MS,
    gap_threshold_ms: float = DEFAULT_GAP_MS,
) -> SyncOffset:
    """Earliest span of at least ``min_hold_ms`` with tips within ``threshold_mm``.

    A span is broken by any paired sample above threshold, or by a pairing
    gap longer than ``gap_threshold_ms`` (no evidence across dropouts).
    """
    if not len(traj_a) or not len(traj_b):
        raise NoContactDetected("contact detection needs two non-empty trajectories")
    i, j = pair_samples(traj_a, traj_b, pair_ms)
    if not len(i):
        raise NoContactDetected("the trajectories never overlap in time")
    t = traj_a.t[i]
    d = np.linalg.norm(traj_a.points[i] - traj_b.points[j], axis=1)
    close = d <= threshold_mm
    hold_ns = min_hold_ms * NS_PER_MS
    gap_ns = gap_threshold_ms * NS_PER_MS

    start = None
    for k in range(len(t)):
        if not close[k]:
            start = None
            continue
        if start is None or t[k] - t[k - 1] > gap_ns:
            start = k
        if t[k] - t[start] >= hold_ns:
            contact = int(t[start])
            return SyncOffset(contact - int(video_contact_ns), contact, "detected")
    raise NoContactDetected(
        f"no span of {min_hold_ms:g} ms with tips within {threshold_mm:g} mm"
    )


def manual_offset(offset_ns: int, video_contact_ns: int = 0) -> SyncOffset:
    return SyncOffset(int(offset_ns), int(video_contact_ns) + int(offset_ns), "manual")


def apply_offset(ann: AnnotationSet, off: SyncOffset) -> AnnotationSet:
    shifted = {}
    for name, s in ann.usage.items():
        moved = s.shift(off.offset)
        if moved and moved.intervals[0].start < 0:
            raise UnderflowBeforeEpoch(
                f"{name} annotation would start {-moved.intervals[0].start} ns before the session epoch"
            )
        shifted[name] = moved
    return AnnotationSet(shifted)
