"""Per-trial analysis: pose logs and annotations in, a metrics report out."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from itertools import product
from pathlib import Path
from typing import Mapping

from .calibration import PivotCalibration, ReferenceCalibration
from .chain import REF_MATCH_MS, ChainSpec, resolve_tip_trajectory
from .errors import InvalidConfig, KinemetricsError, ManifestError, NoContactDetected
from .intervals import IntervalSet, intersect, tracked_intervals
from .io.files import (
    TrialManifest,
    read_annotations,
    read_pivot_calibration,
    read_pose_log,
    read_reference_calibration,
)
from .metrics import (
    ASD_PAIR_MS,
    DEFAULT_SMOOTH_PASSES,
    DEFAULT_SMOOTH_WINDOW,
    InstrumentMetrics,
    MetricsReport,
    bimanual_metrics,
    motion_metrics,
    time_metrics,
    trial_span,
)
from .pose import DEFAULT_GAP_MS, DEFAULT_RATE_HZ, NS_PER_S, PoseTrack, Trajectory, resample_uniform, s_to_ns
from .sync import (
    CONTACT_MIN_HOLD_MS,
    CONTACT_PAIR_MS,
    CONTACT_THRESHOLD_MM,
    INSTRUMENTS,
    AnnotationSet,
    SyncOffset,
    apply_offset,
    detect_contact_sync,
    manual_offset,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisSettings:
    rate_hz: float = DEFAULT_RATE_HZ
    gap_threshold_ms: float = DEFAULT_GAP_MS
    ref_match_ms: float = REF_MATCH_MS
    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    smooth_passes: int = DEFAULT_SMOOTH_PASSES
    contact_threshold_mm: float = CONTACT_THRESHOLD_MM
    contact_hold_ms: float = CONTACT_MIN_HOLD_MS
    contact_pair_ms: float = CONTACT_PAIR_MS
    asd_pair_ms: float = ASD_PAIR_MS
    asd_mode: str = "capt"
    coord_denominator: str = "total"

    def __post_init__(self):
        positive = ("rate_hz", "gap_threshold_ms", "ref_match_ms", "contact_threshold_mm",
                    "contact_hold_ms", "contact_pair_ms", "asd_pair_ms")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise InvalidConfig(f"smooth_window must be a positive odd integer, got {self.smooth_window}")
        if self.smooth_passes < 1:
            raise InvalidConfig(f"smooth_passes must be at least 1, got {self.smooth_passes}")
        if self.asd_mode not in ("capt", "track"):
            raise InvalidConfig(f"asd_mode must be 'capt' or 'track', got {self.asd_mode!r}")
        if self.coord_denominator not in ("total", "alone"):
            raise InvalidConfig(f"coord_denominator must be 'total' or 'alone', got {self.coord_denominator!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> AnalysisSettings:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown analysis settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrialAnalysis:
    report: MetricsReport
    sync: SyncOffset
    trajectories: Mapping[str, Trajectory]
    tracked: Mapping[str, IntervalSet]
    annotations: AnnotationSet


class _Stage:
    """Tags any toolkit error raised inside the block with the pipeline stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, KinemetricsError) and not getattr(exc, "stage", None):
            exc.stage = self.name
        return False


def instrument_pairs(hands: Mapping[str, str], dominant: str) -> list[tuple[str, str]]:
    """Every (dominant-hand, other-hand) instrument pair, in canonical instrument order."""
    order = [i for i in INSTRUMENTS if i in hands]
    dom = [i for i in order if hands[i] == dominant]
    other = [i for i in order if hands[i] != dominant]
    return list(product(dom, other))


def compute_report(
    participant: str,
    group: str,
    trial: int,
    trajectories: Mapping[str, Trajectory],
    tracked: Mapping[str, IntervalSet],
    annotations: AnnotationSet,
    hands: Mapping[str, str],
    dominant: str,
    settings: AnalysisSettings,
) -> MetricsReport:
    """Every instrument and pair metric for trajectories and annotations already on the tracking timeline."""
    instruments = {}
    for name in [i for i in INSTRUMENTS if i in trajectories]:
        usage = annotations[name]
        tm = time_metrics(usage, tracked[name])
        capt = intersect(usage, tracked[name])
        mm = motion_metrics(
            trajectories[name], capt, settings.smooth_window, settings.smooth_passes, tm.t_usage, tm.t_capt
        )
        instruments[name] = InstrumentMetrics(mm, tm)

    span = trial_span(annotations)
    pairs = {}
    for a, b in instrument_pairs(hands, dominant):
        pairs[(a, b)] = bimanual_metrics(
            trajectories[a],
            trajectories[b],
            annotations[a],
            annotations[b],
            tracked[a],
            tracked[b],
            span,
            annotations=annotations,
            asd_mode=settings.asd_mode,
            coord_denominator=settings.coord_denominator,
            pair_ms=settings.asd_pair_ms,
        )
    return MetricsReport(participant, group, trial, instruments, pairs)


@dataclass(frozen=True)
class ToolInput:
    camera: str
    track: PoseTrack
    pivot: PivotCalibration


@dataclass(frozen=True)
class TrialInputs:
    """Everything one trial analysis needs, already parsed."""

    participant: str
    group: str
    trial: int
    dominant_hand: str
    tools: Mapping[str, ToolInput]
    references: Mapping[str, PoseTrack]
    annotations: AnnotationSet
    ref_cal: ReferenceCalibration | None = None
    video_contact_ns: int = 0
    sync_offset_ns: int | None = None


def load_inputs(manifest: TrialManifest) -> TrialInputs:
    with _Stage("load"):
        logs = {}

        def pose_log(path: Path):
            if path not in logs:
                logs[path] = read_pose_log(path)
            return logs[path]

        tools = {}
        for name in [i for i in INSTRUMENTS if i in manifest.instruments]:
            entry = manifest.instruments[name]
            tool_log = pose_log(entry.pose_log)
            body = entry.body_id or f"tool-{name}"
            if body not in tool_log.tracks:
                raise ManifestError(f"{entry.pose_log}: no body {body!r}")
            tools[name] = ToolInput(entry.camera, tool_log.tracks[body], read_pivot_calibration(entry.pivot_calibration))
        refs = {}
        for side, path in manifest.reference_logs.items():
            ref_body = manifest.reference_bodies.get(side, f"ref-{side}")
            ref_log = pose_log(path)
            if ref_body not in ref_log.tracks:
                raise ManifestError(f"{path}: no body {ref_body!r}")
            refs[side] = ref_log.tracks[ref_body]
        ref_cal = None
        if manifest.reference_calibration is not None:
            ref_cal = read_reference_calibration(manifest.reference_calibration)
        return TrialInputs(
            manifest.participant,
            manifest.group,
            manifest.trial,
            manifest.dominant_hand,
            tools,
            refs,
            read_annotations(manifest.annotations),
            ref_cal,
            s_to_ns(manifest.video_contact_s or 0.0),
            None if manifest.sync_offset_s is None else s_to_ns(manifest.sync_offset_s),
        )


def analyze_inputs(inputs: TrialInputs, settings: AnalysisSettings | None = None) -> TrialAnalysis:
    settings = settings or AnalysisSettings()
    trajectories: dict[str, Trajectory] = {}
    tracked: dict[str, IntervalSet] = {}
    for name in [i for i in INSTRUMENTS if i in inputs.tools]:
        tool_in = inputs.tools[name]
        with _Stage(f"resolve:{name}"):
            if tool_in.camera not in inputs.references:
                raise ManifestError(f"no reference track for the {tool_in.camera} camera")
            tool = resample_uniform(tool_in.track, settings.rate_hz, settings.gap_threshold_ms)
            spec = ChainSpec(tool_in.camera, tool, inputs.references[tool_in.camera], tool_in.pivot, inputs.ref_cal)
            traj = resolve_tip_trajectory(spec, settings.ref_match_ms)
            trajectories[name] = traj
            tracked[name] = tracked_intervals(traj, settings.gap_threshold_ms, settings.rate_hz)

    with _Stage("sync"):
        if inputs.sync_offset_ns is not None:
            sync = manual_offset(inputs.sync_offset_ns, inputs.video_contact_ns)
        else:
            if "bipolar" not in trajectories or "aspirator" not in trajectories:
                raise NoContactDetected("contact sync needs bipolar and aspirator trajectories")
            sync = detect_contact_sync(
                trajectories["bipolar"],
                trajectories["aspirator"],
                inputs.video_contact_ns,
                settings.contact_threshold_mm,
                settings.contact_hold_ms,
                settings.contact_pair_ms,
                settings.gap_threshold_ms,
            )
        annotations = apply_offset(inputs.annotations, sync)
        log.info("sync offset %.6f s (%s)", sync.offset / NS_PER_S, sync.confidence)

    with _Stage("metrics"):
        hands = {name: t.camera for name, t in inputs.tools.items()}
        report = compute_report(
            inputs.participant,
            inputs.group,
            inputs.trial,
            trajectories,
            tracked,
            annotations,
            hands,
            inputs.dominant_hand,
            settings,
        )
    return TrialAnalysis(report, sync, trajectories, tracked, annotations)


def analyze_trial(manifest: TrialManifest, settings: AnalysisSettings | None = None) -> TrialAnalysis:
    return analyze_inputs(load_inputs(manifest), settings)


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6g}"


def summary_text(analysis: TrialAnalysis) -> str:
    r = analysis.report
    lines = [
        f"participant {r.participant}  group {r.group}  trial {r.trial}",
        f"sync offset {analysis.sync.offset / NS_PER_S:.6f} s ({analysis.sync.confidence})",
        "",
        "instrument  usage_s  track_s  capt_s  captured  velocity  accel  jerk  path_mm",
    ]
    for name, m in r.instruments.items():
        t, mo = m.time, m.motion
        pct = "undefined" if t.pct_captured is None else f"{100 * t.pct_captured:.1f}%"
        lines.append(
            f"{name:<10}  {t.t_usage:.3f}  {t.t_track:.3f}  {t.t_capt:.3f}  {pct}  "
            f"{_fmt(mo.avg_velocity)}  {_fmt(mo.avg_acceleration)}  {_fmt(mo.avg_jerk)}  {mo.path_length:.3f}"
        )
        for flag in mo.flags + t.flags:
            lines.append(f"  flag: {flag}")
    if r.pairs:
        lines += ["", "pair  ASD_mm  bimanual_usage_s  bimanual_capt_s  CoordIdx  EI"]
        for (a, b), m in r.pairs.items():
            lines.append(
                f"{a}+{b}  {_fmt(m.asd)}  {m.bit_usage:.3f}  {m.bit_capt:.3f}  "
                f"{_fmt(m.coord_idx)}  {_fmt(m.efficiency_idx)}"
            )
            for flag in m.flags:
                lines.append(f"  flag: {flag}")
    return "\n".join(lines) + "\n"
