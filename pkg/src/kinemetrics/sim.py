"""Deterministic synthetic trials with known ground truth.

A trial is described by an explicit :class:`SimConfig`: piecewise tip paths
per instrument in the global (right-reference) frame, usage schedules on the
tracking timeline, the opening tip-contact gesture, and the camera and
reference-marker placement. Camera observations are obtained by running the
transform chain backwards, then corrupted with Gaussian position noise and
burst dropouts. The seed only drives the corruption, so a config file fully
determines its trial.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import calibration
from .calibration import PivotCalibration, ReferenceCalibration
from .chain import ChainSpec
from .errors import InvalidConfig
from .intervals import IntervalSet, tracked_intervals
from .io import files
from .io.wire import WireMessage, encode_wire
from .metrics import MetricsReport
from .pipeline import AnalysisSettings, ToolInput, TrialInputs, compute_report
from .pose import (
    NS_PER_S,
    PoseTrack,
    RigidTransform,
    Trajectory,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
    resample_uniform,
    s_to_ns,
)
from .stats import GROUP_ORDER, GroupSample
from .sync import INSTRUMENTS, AnnotationSet

CONFIG_KIND = "sim-config"
TRANSIT_S = 0.6
APPROACH_MM = 30.0
APPROACH_SPEED = 1000.0  # mm/s


# ---------------------------------------------------------------------------
# motion profiles


@dataclass(frozen=True)
class Segment:
    """One piece of a tip path.

    ``hold`` rests at ``start``; ``line`` moves from ``start`` to ``end`` at
    constant speed; ``arc`` circles the centre ``start`` with ``radius`` at
    ``omega`` rad/s in the plane spanned by ``u`` and ``v``.
    """

    kind: str
    t0: float
    t1: float
    start: tuple[float, float, float]
    end: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    u: tuple[float, float, float] = (1.0, 0.0, 0.0)
    v: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def position(self, t: np.ndarray) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), self.t0, self.t1)
        s = np.asarray(self.start, dtype=float)
        if self.kind == "hold":
            return np.broadcast_to(s, t.shape + (3,)).copy()
        if self.kind == "line":
            f = (t - self.t0) / (self.t1 - self.t0)
            return s + f[..., None] * (np.asarray(self.end) - s)
        if self.kind == "arc":
            phi = self.phase + self.omega * (t - self.t0)
            return s + self.radius * (
                np.cos(phi)[..., None] * np.asarray(self.u) + np.sin(phi)[..., None] * np.asarray(self.v)
            )
        raise InvalidConfig(f"unknown segment kind {self.kind!r}")

    def end_point(self) -> np.ndarray:
        return self.position(np.array(self.t1))


def path_position(segments: Sequence[Segment], t) -> np.ndarray:
    """Evaluate a piecewise path; times outside it clamp to the nearest end."""
    t = np.asarray(t, dtype=float)
    starts = np.array([s.t0 for s in segments])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(segments) - 1)
    out = np.empty(t.shape + (3,))
    for k, seg in enumerate(segments):
        m = idx == k
        if np.any(m):
            out[m] = seg.position(t[m])
    return out


@dataclass(frozen=True)
class InstrumentSim:
    body_id: str
    camera: str
    tip_offset: tuple[float, float, float]
    motion: tuple[Segment, ...]
    usage: tuple[tuple[float, float], ...]
    base_rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    wobble_deg: float = 10.0
    wobble_phase: tuple[float, float] = (0.0, 0.0)

    def orientation(self, t: np.ndarray) -> np.ndarray:
        """Tool-body orientation in the global frame: a base pose with a slow wobble."""
        w = math.radians(self.wobble_deg)
        a = w * np.sin(0.9 * t + self.wobble_phase[0])
        b = w * np.sin(0.6 * t + self.wobble_phase[1])
        qa = np.stack([np.cos(a / 2), np.sin(a / 2), 0 * a, 0 * a], axis=-1)
        qb = np.stack([np.cos(b / 2), 0 * b, np.sin(b / 2), 0 * b], axis=-1)
        return quat_multiply(np.asarray(self.base_rotation), quat_multiply(qa, qb))


def _pose_dict(t: RigidTransform) -> dict:
    return {"rotation": [float(v) for v in t.rotation], "translation": [float(v) for v in t.translation]}


def _pose_from(d) -> RigidTransform:
    try:
        return RigidTransform(d["rotation"], d["translation"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidConfig(f"bad pose {d!r}: {e}") from None


@dataclass(frozen=True)
class SimConfig:
    seed: int
    duration_s: float
    instruments: Mapping[str, InstrumentSim]
    cameras: Mapping[str, RigidTransform]
    left_reference: RigidTransform
    tracker_rate_hz: float = 100.0
    noise_sigma_mm: float = 0.1
    ref_noise_sigma_mm: float = 0.0
    dropout_rate: float = 0.0
    dropout_burst_ms: float = 300.0
    protect_contact: bool = True
    contact_time_s: float = 3.2
    contact_hold_s: float = 1.0
    video_contact_s: float = 0.0
    participant: str = "SIM001"
    group: str = "Student"
    trial: int = 1
    dominant_hand: str = "right"
    pivot_samples: int = 500
    pivot_coverage_deg: float = 90.0
    pivot_point: tuple[float, float, float] = (20.0, -30.0, 450.0)
    reference_pairs: int = 50
    calibration_camera: RigidTransform = field(
        default_factory=lambda: RigidTransform(quat_from_axis_angle((1, 0, 0), math.pi), (-150.0, 0.0, 800.0))
    )

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        if not self.duration_s > 0 or not self.tracker_rate_hz > 0:
            raise InvalidConfig("duration and tracker rate must be positive")
        if self.noise_sigma_mm < 0 or self.ref_noise_sigma_mm < 0:
            raise InvalidConfig("noise sigma must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        if not self.dropout_burst_ms > 0:
            raise InvalidConfig("dropout_burst_ms must be positive")
        if self.group not in GROUP_ORDER:
            raise InvalidConfig(f"group must be one of {GROUP_ORDER}")
        if self.dominant_hand not in ("right", "left"):
            raise InvalidConfig("dominant_hand must be 'right' or 'left'")
        if not 0 <= self.contact_time_s <= self.duration_s:
            raise InvalidConfig("contact time lies outside the trial")
        if self.pivot_samples < 3 or self.reference_pairs < 1:
            raise InvalidConfig("need at least 3 pivot samples and 1 reference pair")
        if not 0 <= self.pivot_coverage_deg <= 180:
            raise InvalidConfig("pivot coverage must lie in [0, 180] degrees")
        if not self.instruments:
            raise InvalidConfig("no instruments configured")
        bodies = set()
        for name, inst in self.instruments.items():
            if name not in INSTRUMENTS:
                raise InvalidConfig(f"unknown instrument {name!r}")
            if inst.camera not in self.cameras:
                raise InvalidConfig(f"{name}: no pose for camera {inst.camera!r}")
            if not inst.body_id or len(inst.body_id) > 16 or inst.body_id in bodies or "," in inst.body_id:
                raise InvalidConfig(f"{name}: body id {inst.body_id!r} must be unique, 1-16 chars")
            bodies.add(inst.body_id)
            if not inst.motion:
                raise InvalidConfig(f"{name}: empty motion profile")
            for seg in inst.motion:
                if seg.kind not in ("hold", "line", "arc") or not seg.t1 > seg.t0:
                    raise InvalidConfig(f"{name}: bad segment {seg}")
            for a, b in inst.usage:
                if not 0 <= a < b <= self.duration_s:
                    raise InvalidConfig(f"{name}: usage [{a}, {b}] outside [0, {self.duration_s}]")
        if any(c not in ("right", "left") for c in self.cameras):
            raise InvalidConfig("cameras must be named 'right' and 'left'")

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "schema": files.SCHEMA,
            "kind": CONFIG_KIND,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "tracker_rate_hz": self.tracker_rate_hz,
            "noise_sigma_mm": self.noise_sigma_mm,
            "ref_noise_sigma_mm": self.ref_noise_sigma_mm,
            "dropout_rate": self.dropout_rate,
            "dropout_burst_ms": self.dropout_burst_ms,
            "protect_contact": self.protect_contact,
            "contact_time_s": self.contact_time_s,
            "contact_hold_s": self.contact_hold_s,
            "video_contact_s": self.video_contact_s,
            "participant": self.participant,
            "group": self.group,
            "trial": self.trial,
            "dominant_hand": self.dominant_hand,
            "pivot_samples": self.pivot_samples,
            "pivot_coverage_deg": self.pivot_coverage_deg,
            "pivot_point": list(self.pivot_point),
            "reference_pairs": self.reference_pairs,
            "cameras": {k: _pose_dict(v) for k, v in self.cameras.items()},
            "left_reference": _pose_dict(self.left_reference),
            "calibration_camera": _pose_dict(self.calibration_camera),
            "instruments": {},
        }
        for name, inst in self.instruments.items():
            d["instruments"][name] = {
                "body_id": inst.body_id,
                "camera": inst.camera,
                "tip_offset": list(inst.tip_offset),
                "base_rotation": list(inst.base_rotation),
                "wobble_deg": inst.wobble_deg,
                "wobble_phase": list(inst.wobble_phase),
                "usage": [list(u) for u in inst.usage],
                "motion": [
                    {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(seg).items()}
                    for seg in inst.motion
                ],
            }
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> SimConfig:
        try:
            instruments = {}
            for name, e in d["instruments"].items():
                motion = tuple(
                    Segment(
                        s["kind"], float(s["t0"]), float(s["t1"]), tuple(s["start"]), tuple(s.get("end", (0, 0, 0))),
                        float(s.get("radius", 0)), float(s.get("omega", 0)), float(s.get("phase", 0)),
                        tuple(s.get("u", (1, 0, 0))), tuple(s.get("v", (0, 1, 0))),
                    )
                    for s in e["motion"]
                )
                instruments[name] = InstrumentSim(
                    e["body_id"], e["camera"], tuple(e["tip_offset"]), motion,
                    tuple((float(a), float(b)) for a, b in e["usage"]),
                    tuple(e.get("base_rotation", (1, 0, 0, 0))), float(e.get("wobble_deg", 10.0)),
                    tuple(e.get("wobble_phase", (0, 0))),
                )
            scalars = {
                k: d[k]
                for k in (
                    "duration_s", "tracker_rate_hz", "noise_sigma_mm", "ref_noise_sigma_mm", "dropout_rate",
                    "dropout_burst_ms", "protect_contact", "contact_time_s", "contact_hold_s", "video_contact_s",
                    "participant", "group", "trial", "dominant_hand", "pivot_samples", "pivot_coverage_deg",
                    "reference_pairs",
                )
                if k in d
            }
            cfg = cls(
                seed=int(d["seed"]),
                instruments=instruments,
                cameras={k: _pose_from(v) for k, v in d["cameras"].items()},
                left_reference=_pose_from(d["left_reference"]),
                pivot_point=tuple(d.get("pivot_point", (20.0, -30.0, 450.0))),
                **scalars,
                **({"calibration_camera": _pose_from(d["calibration_camera"])} if "calibration_camera" in d else {}),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfig(f"malformed simulation config: {e!r}") from None
        cfg.validate()
        return cfg


def save_config(path, cfg: SimConfig) -> None:
    files.dump_json(path, cfg.to_dict())


def load_config(path) -> SimConfig:
    return SimConfig.from_dict(files.load_json(path, CONFIG_KIND))


def lossless(cfg: SimConfig) -> SimConfig:
    return replace(cfg, noise_sigma_mm=0.0, ref_noise_sigma_mm=0.0, dropout_rate=0.0)


# ---------------------------------------------------------------------------
# trial layout


def _random_arc(rng: np.random.Generator, t0: float, t1: float, centre, radius=(10.0, 20.0), omega=(2.0, 4.0)) -> Segment:
    r = rng.uniform(*radius)
    w = rng.uniform(*omega) * rng.choice([-1.0, 1.0])
    tilt = quat_to_matrix(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, math.radians(25))))
    return Segment(
        "arc", t0, t1, tuple(float(c) for c in centre), radius=float(r), omega=float(w),
        phase=float(rng.uniform(0, 2 * math.pi)), u=tuple(tilt[:, 0]), v=tuple(tilt[:, 1]),
    )


def build_motion(
    rng: np.random.Generator,
    usage: Sequence[tuple[float, float]],
    work_centre,
    rest,
    duration: float,
    prelude: Sequence[Segment] = (),
    **arc_ranges,
) -> tuple[Segment, ...]:
    """Rest on the table, travel to the work site for each use, circle there, travel back."""
    rest = np.asarray(rest, dtype=float)
    segs = list(prelude)
    t = segs[-1].t1 if segs else 0.0
    pos = segs[-1].end_point() if segs else rest

    def move(p0, p1, a, b):
        segs.append(Segment("line", a, b, tuple(map(float, p0)), tuple(map(float, p1))))

    for s, e in usage:
        if s - t < 0.1:
            raise InvalidConfig(f"usage at {s} s leaves no time to reach the work site")
        arc = _random_arc(rng, s, e, work_centre, **arc_ranges)
        a0 = arc.position(np.array(s))
        if s - t >= 2 * TRANSIT_S + 0.2:
            move(pos, rest, t, t + TRANSIT_S)
            segs.append(Segment("hold", t + TRANSIT_S, s - TRANSIT_S, tuple(rest)))
            move(rest, a0, s - TRANSIT_S, s)
        else:
            move(pos, a0, t, s)
        segs.append(arc)
        pos, t = arc.end_point(), e
    if duration - t >= TRANSIT_S + 0.1:
        move(pos, rest, t, t + TRANSIT_S)
        segs.append(Segment("hold", t + TRANSIT_S, duration, tuple(rest)))
    elif duration > t:
        segs.append(Segment("hold", t, duration, tuple(map(float, pos))))
    return tuple(segs)


def contact_prelude(contact_s: float, hold_s: float, point) -> tuple[tuple[Segment, ...], tuple[Segment, ...]]:
    """Bipolar waits at ``point``; the aspirator approaches it at constant speed and both hold."""
    p = tuple(float(c) for c in point)
    away = (p[0] + APPROACH_MM, p[1], p[2])
    t_go = contact_s - APPROACH_MM / APPROACH_SPEED
    end = contact_s + hold_s
    bip = (Segment("hold", 0.0, end, p),)
    asp = (
        Segment("hold", 0.0, t_go, away),
        Segment("line", t_go, contact_s, away, p),
        Segment("hold", contact_s, end, p),
    )
    return bip, asp


DEFAULT_CAMERAS = {
    "right": RigidTransform(quat_from_axis_angle((1, 0.2, 0), math.radians(160)), (180.0, -250.0, 700.0)),
    "left": RigidTransform(quat_from_axis_angle((1, -0.3, 0.1), math.radians(150)), (-320.0, -260.0, 650.0)),
}
DEFAULT_LEFT_REFERENCE = RigidTransform(quat_from_axis_angle((0, 0, 1), math.radians(25)), (-300.0, 20.0, 5.0))
TIP_OFFSETS = {"bipolar": (0.0, 0.0, 120.0), "aspirator": (4.0, -3.0, 150.0), "scissors": (0.0, 2.0, 110.0)}
BASE_ROTATIONS = {
    "bipolar": tuple(quat_from_axis_angle((1, 1, 0), math.radians(140))),
    "aspirator": tuple(quat_from_axis_angle((1, -1, 0), math.radians(145))),
    "scissors": tuple(quat_from_axis_angle((1, -0.5, 0), math.radians(135))),
}
WORK_SITE = np.array([100.0, 50.0, -20.0])


def layout_trial(
    seed: int,
    schedules: Mapping[str, Sequence[tuple[float, float]]],
    duration_s: float,
    separation_mm: float = 25.0,
    arc_radius: tuple[float, float] = (10.0, 20.0),
    arc_omega: tuple[float, float] = (2.0, 4.0),
    contact_time_s: float = 3.2,
    contact_hold_s: float = 1.0,
    **overrides,
) -> SimConfig:
    """Turn usage schedules into a full config with the standard scene geometry.

    Bipolar sits in the left hand (left camera); aspirator and scissors share
    the right hand (right camera). Work centres of the two hands lie
    ``separation_mm`` apart.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    half = np.array([separation_mm / 2.0, 0.0, 0.0])
    centres = {"bipolar": WORK_SITE - half, "aspirator": WORK_SITE + half, "scissors": WORK_SITE + half + [0, 8.0, 0]}
    rests = {
        "bipolar": WORK_SITE + [-160.0, -90.0, 10.0],
        "aspirator": WORK_SITE + [160.0, -90.0, 10.0],
        "scissors": WORK_SITE + [175.0, -60.0, 10.0],
    }
    contact_point = WORK_SITE + [0.0, -40.0, 15.0]
    bip_pre, asp_pre = contact_prelude(contact_time_s, contact_hold_s, contact_point)
    preludes = {"bipolar": bip_pre, "aspirator": asp_pre, "scissors": ()}
    cameras = {"bipolar": "left", "aspirator": "right", "scissors": "right"}

    instruments = {}
    for name in INSTRUMENTS:
        if name not in schedules:
            continue
        usage = tuple((float(a), float(b)) for a, b in schedules[name])
        motion = build_motion(
            rng, usage, centres[name], rests[name], duration_s, preludes[name], radius=arc_radius, omega=arc_omega
        )
        instruments[name] = InstrumentSim(
            body_id=f"tool-{name}",
            camera=cameras[name],
            tip_offset=TIP_OFFSETS[name],
            motion=motion,
            usage=usage,
            base_rotation=BASE_ROTATIONS[name],
            wobble_deg=8.0,
            wobble_phase=(float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi))),
        )
    cfg = SimConfig(
        seed=seed,
        duration_s=duration_s,
        instruments=instruments,
        cameras=dict(DEFAULT_CAMERAS),
        left_reference=DEFAULT_LEFT_REFERENCE,
        contact_time_s=contact_time_s,
        contact_hold_s=contact_hold_s,
        **overrides,
    )
    cfg.validate()
    return cfg


def default_config(seed: int = 0, **overrides) -> SimConfig:
    """A 60 s trial exercising every tracking scenario.

    Instruments rest on the table (tracked, not in use), travel to the work
    site, and circle there while in use; the right hand swaps aspirator and
    scissors once.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FF]))
    j = lambda: float(rng.uniform(-0.4, 0.4))  # noqa: E731 - schedule jitter
    schedules = {
        "bipolar": [(5.0 + j(), 24.0 + j()), (27.5 + j(), 52.0 + j())],
        "aspirator": [(8.0 + j(), 21.5 + j()), (31.0 + j(), 50.0 + j())],
        "scissors": [(24.0 + j(), 28.5 + j())],
    }
    return layout_trial(seed, schedules, overrides.pop("duration_s", 60.0), **overrides)


# ---------------------------------------------------------------------------
# observation model


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def frame_times(duration_s: float, rate_hz: float) -> np.ndarray:
    n = int(math.floor(duration_s * rate_hz + 1e-9)) + 1
    return np.rint(np.arange(n) * (NS_PER_S / rate_hz)).astype(np.int64)


def burst_start_probability(dropout_rate: float, burst_frames: int) -> float:
    """Per-frame chance of starting a burst so that the expected lost fraction is ``dropout_rate``.

    Every burst of ``n`` frames removes ``(n + 1)`` frame periods of tracked
    time; visible runs between bursts are geometric with mean ``1/p``.
    """
    if dropout_rate <= 0:
        return 0.0
    mean_visible = (burst_frames + 1) / dropout_rate - burst_frames
    return min(1.0, 1.0 / max(mean_visible, 1.0))


def dropout_mask(
    rng: np.random.Generator,
    n_frames: int,
    dropout_rate: float,
    burst_frames: int,
    protected: np.ndarray | None = None,
) -> np.ndarray:
    """Visibility per frame from alternating geometric visible runs and fixed bursts."""
    visible = np.ones(n_frames, dtype=bool)
    p = burst_start_probability(dropout_rate, burst_frames)
    if p > 0:
        i = 0
        while i < n_frames:
            i += int(rng.geometric(p))
            visible[i : i + burst_frames] = False
            i += burst_frames
    if protected is not None:
        visible |= protected
    return visible


def observe(
    cam: RigidTransform, q_global: np.ndarray, p_global: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """``invert(T_Cam^Global) ∘ T_Body^Global`` for arrays of body poses."""
    qc = quat_conjugate(cam.rotation)
    q = quat_multiply(qc, q_global)
    p = (p_global - cam.translation) @ cam.rotation_matrix
    return q, p


def synth_pivot_samples(
    offset,
    pivot,
    n: int,
    coverage_deg: float,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | int | None = None,
    base_rotation=(1.0, 0.0, 0.0, 0.0),
) -> list[RigidTransform]:
    """Poses swivelling about ``pivot`` with the tip at ``offset`` in the tool frame.

    Rotations are spread through the ball of angle ``coverage_deg / 2`` about
    a base orientation, plus two samples at opposite extremes, so the
    pairwise coverage reaches the requested value. ``R_i offset + t_i =
    pivot`` holds exactly before noise.
    """
    if n < 3:
        raise InvalidConfig("pivot sampling needs n >= 3")
    if not 0 <= coverage_deg <= 180:
        raise InvalidConfig("coverage must lie in [0, 180] degrees")
    if noise_sigma < 0:
        raise InvalidConfig("noise sigma must be non-negative")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    half = math.radians(coverage_deg) / 2.0
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = half * rng.uniform(size=n) ** (1.0 / 3.0)
    angles[0], angles[1] = half, half
    axes[1] = -axes[0]
    q_local = np.column_stack([np.cos(angles / 2), np.sin(angles / 2)[:, None] * axes])
    q = quat_multiply(np.asarray(base_rotation, dtype=float), q_local)
    R = quat_to_matrix(q)
    t = np.asarray(pivot, dtype=float) - R @ np.asarray(offset, dtype=float)
    if noise_sigma > 0:
        t = t + rng.normal(scale=noise_sigma, size=t.shape)
    return [RigidTransform(qi, ti) for qi, ti in zip(q, t)]


@dataclass(frozen=True)
class GroundTruth:
    report: MetricsReport
    sync_offset_ns: int
    contact_time_ns: int
    trajectories: Mapping[str, Trajectory]
    tracked: Mapping[str, IntervalSet]
    usage: AnnotationSet


@dataclass(frozen=True)
class SimulatedTrial:
    config: SimConfig
    logs: Mapping[str, list[PoseTrack]]  # camera -> tracks (reference first)
    annotations: AnnotationSet  # video timeline
    pivot_logs: Mapping[str, PoseTrack]
    pivot_calibrations: Mapping[str, PivotCalibration]
    reference_pairs_log: list[PoseTrack]
    reference_calibration: ReferenceCalibration
    ground_truth: GroundTruth

    def inputs(self) -> TrialInputs:
        cfg = self.config
        tracks = {tr.body_id: tr for trs in self.logs.values() for tr in trs}
        tools = {
            name: ToolInput(inst.camera, tracks[inst.body_id], self.pivot_calibrations[name])
            for name, inst in cfg.instruments.items()
        }
        refs = {cam: tracks[f"ref-{cam}"] for cam in self.logs}
        return TrialInputs(
            cfg.participant, cfg.group, cfg.trial, cfg.dominant_hand, tools, refs,
            self.annotations, self.reference_calibration, s_to_ns(cfg.video_contact_s),
        )


def simulate_trial(cfg: SimConfig, settings: AnalysisSettings | None = None) -> SimulatedTrial:
    cfg.validate()
    settings = settings or AnalysisSettings(rate_hz=cfg.tracker_rate_hz)
    rng_drop, rng_noise, rng_ref, rng_pivot, rng_pairs = _rngs(cfg.seed, 5)

    t_ns = frame_times(cfg.duration_s, cfg.tracker_rate_hz)
    t_s = t_ns / NS_PER_S
    period_ms = 1000.0 / cfg.tracker_rate_hz
    burst = max(1, int(round(cfg.dropout_burst_ms / period_ms)))
    protected = None
    if cfg.protect_contact:
        lo = cfg.contact_time_s - APPROACH_MM / APPROACH_SPEED - 0.5
        hi = cfg.contact_time_s + cfg.contact_hold_s + 0.5
        protected = (t_s >= lo) & (t_s <= hi)

    contact_ns = s_to_ns(cfg.contact_time_s)
    offset_ns = contact_ns - s_to_ns(cfg.video_contact_s)

    logs: dict[str, list[PoseTrack]] = {}
    for cam_name in sorted({inst.camera for inst in cfg.instruments.values()}):
        cam = cfg.cameras[cam_name]
        ref_global = RigidTransform() if cam_name == "right" else cfg.left_reference
        qr, pr = observe(cam, np.tile(ref_global.rotation, (len(t_ns), 1)), np.tile(ref_global.translation, (len(t_ns), 1)))
        if cfg.ref_noise_sigma_mm > 0:
            pr = pr + rng_ref.normal(scale=cfg.ref_noise_sigma_mm, size=pr.shape)
        logs[cam_name] = [PoseTrack(f"ref-{cam_name}", cam_name, t_ns, qr, pr)]

    gt_traj, gt_tracked, usage = {}, {}, {}
    for name in [i for i in INSTRUMENTS if i in cfg.instruments]:
        inst = cfg.instruments[name]
        tip = path_position(inst.motion, t_s)
        qg = inst.orientation(t_s)
        pg = tip - np.einsum("nij,j->ni", quat_to_matrix(qg), np.asarray(inst.tip_offset))
        q, p = observe(cfg.cameras[inst.camera], qg, pg)
        vis = dropout_mask(rng_drop, len(t_ns), cfg.dropout_rate, burst, protected)
        if cfg.noise_sigma_mm > 0:
            p = p + rng_noise.normal(scale=cfg.noise_sigma_mm, size=p.shape)
        q = np.where(vis[:, None], q, [1.0, 0.0, 0.0, 0.0])
        p = np.where(vis[:, None], p, 0.0)
        logs[inst.camera].append(PoseTrack(inst.body_id, inst.camera, t_ns, q, p, vis))

        # ground truth: the clean tip path seen through the same sampling
        clean = PoseTrack(inst.body_id, "truth", t_ns, np.tile([1.0, 0, 0, 0], (len(t_ns), 1)), tip, vis)
        res = resample_uniform(clean, settings.rate_hz, settings.gap_threshold_ms)
        gt_traj[name] = Trajectory(res.t, res.p)
        gt_tracked[name] = tracked_intervals(gt_traj[name], settings.gap_threshold_ms, settings.rate_hz)
        usage[name] = IntervalSet((s_to_ns(a), s_to_ns(b)) for a, b in inst.usage)

    usage_set = AnnotationSet(usage)
    annotations = AnnotationSet({k: v.shift(-offset_ns) for k, v in usage.items()})
    hands = {name: inst.camera for name, inst in cfg.instruments.items()}
    report = compute_report(
        cfg.participant, cfg.group, cfg.trial, gt_traj, gt_tracked, usage_set, hands, cfg.dominant_hand, settings
    )
    truth = GroundTruth(report, offset_ns, contact_ns, gt_traj, gt_tracked, usage_set)

    # calibration recordings
    pivot_logs, pivots = {}, {}
    step = NS_PER_S // 100
    for name in [i for i in INSTRUMENTS if i in cfg.instruments]:
        inst = cfg.instruments[name]
        samples = synth_pivot_samples(
            inst.tip_offset, cfg.pivot_point, cfg.pivot_samples, cfg.pivot_coverage_deg,
            cfg.noise_sigma_mm, rng_pivot, inst.base_rotation,
        )
        tt = np.arange(len(samples), dtype=np.int64) * step
        pivot_logs[name] = PoseTrack(
            inst.body_id, inst.camera, tt, [s.rotation for s in samples], [s.translation for s in samples]
        )
        pivots[name] = calibration.pivot_calibrate(samples)

    top = cfg.calibration_camera
    n = cfg.reference_pairs
    tt = np.arange(n, dtype=np.int64) * (NS_PER_S // 10)
    qr, pr = observe(top, np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros((n, 3)))
    ql, pl = observe(top, np.tile(cfg.left_reference.rotation, (n, 1)), np.tile(cfg.left_reference.translation, (n, 1)))
    if cfg.noise_sigma_mm > 0:
        pr = pr + rng_pairs.normal(scale=cfg.noise_sigma_mm, size=pr.shape)
        pl = pl + rng_pairs.normal(scale=cfg.noise_sigma_mm, size=pl.shape)
    pair_log = [PoseTrack("ref-right", "top", tt, qr, pr), PoseTrack("ref-left", "top", tt, ql, pl)]
    ref_cal = calibration.reference_calibrate(
        [(RigidTransform(a, b), RigidTransform(c, d)) for a, b, c, d in zip(qr, pr, ql, pl)]
    )
    return SimulatedTrial(cfg, logs, annotations, pivot_logs, pivots, pair_log, ref_cal, truth)


# ---------------------------------------------------------------------------
# two-camera scene for chain checks


def two_camera_scene(seed: int, n: int = 500, noise_sigma: float = 0.0, rate_hz: float = 100.0):
    """One tool seen by both cameras with random camera and reference placement.

    Returns ``(right_spec, left_spec, truth)`` where ``truth`` is the global
    tip trajectory. Calibrations are the exact generating values.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2CA]))

    def random_pose(scale):
        return RigidTransform(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, math.pi)), rng.normal(scale=scale, size=3))

    cam_r, cam_l = random_pose(500.0), random_pose(500.0)
    left_ref = random_pose(300.0)
    offset = rng.normal(scale=60.0, size=3)
    t_ns = np.arange(n, dtype=np.int64) * int(round(NS_PER_S / rate_hz))
    t = t_ns / NS_PER_S
    arc = _random_arc(rng, 0.0, t[-1] + 1.0, rng.normal(scale=50.0, size=3))
    tip = arc.position(t)
    axis = rng.normal(size=3)
    qg = np.array([quat_from_axis_angle(axis, 0.3 * np.sin(1.3 * x) + 0.5) for x in t])
    pg = tip - np.einsum("nij,j->ni", quat_to_matrix(qg), offset)
    pivot = PivotCalibration(offset, np.zeros(3), 0.0, 0, 0.0)
    ref_cal = ReferenceCalibration(left_ref, 0.0, 1)
    specs = []
    for side, cam, ref_g in (("right", cam_r, RigidTransform()), ("left", cam_l, left_ref)):
        q, p = observe(cam, qg, pg)
        if noise_sigma > 0:
            p = p + rng.normal(scale=noise_sigma, size=p.shape)
        qr, pr = observe(cam, ref_g.rotation[None, :], ref_g.translation[None, :])
        ref_track = PoseTrack(f"ref-{side}", side, t_ns, np.repeat(qr, n, axis=0), np.repeat(pr, n, axis=0))
        tool_track = PoseTrack("tool", side, t_ns, q, p)
        specs.append(ChainSpec(side, tool_track, ref_track, pivot, ref_cal if side == "left" else None))
    return specs[0], specs[1], Trajectory(t_ns, tip)


# ---------------------------------------------------------------------------
# writing trials


def wire_stream(tracks: Sequence[PoseTrack], epoch_ns: int = 0) -> bytes:
    """Interleave the tracks of one camera into a time-ordered wire recording."""
    rows = sorted((int(tr.t[i]), k, i) for k, tr in enumerate(tracks) for i in range(len(tr)))
    out = bytearray()
    for t, k, i in rows:
        tr = tracks[k]
        pose = RigidTransform(tr.q[i], tr.p[i]) if tr.visible[i] else RigidTransform()
        out += encode_wire(WireMessage.transform(tr.body_id, t + epoch_ns, pose, bool(tr.visible[i])))
    return bytes(out)


def write_trial(trial: SimulatedTrial, out_dir, wire: bool = False) -> Path:
    """Write every artifact of a simulated trial; returns the manifest path."""
    cfg = trial.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.json", cfg)
    for cam, tracks in trial.logs.items():
        files.write_pose_log(out / "poses" / f"cam-{cam}.csv", tracks, camera_id=cam)
        if wire:
            (out / "wire").mkdir(exist_ok=True)
            files.atomic_write_bytes(out / "wire" / f"cam-{cam}.bin", wire_stream(tracks))
    instruments = {}
    for name, inst in cfg.instruments.items():
        files.write_pose_log(out / "calibration" / f"pivot-{name}.csv", [trial.pivot_logs[name]], camera_id=inst.camera)
        files.write_pivot_calibration(out / "calibration" / f"pivot-{name}.json", trial.pivot_calibrations[name], inst.body_id)
        instruments[name] = {
            "pose_log": f"poses/cam-{inst.camera}.csv",
            "camera": inst.camera,
            "body_id": inst.body_id,
            "pivot_calibration": f"calibration/pivot-{name}.json",
        }
    files.write_pose_log(out / "calibration" / "reference-pairs.csv", trial.reference_pairs_log, camera_id="top")
    files.write_reference_calibration(out / "calibration" / "reference.json", trial.reference_calibration)
    files.write_annotations(out / "annotations.csv", trial.annotations)

    gt = trial.ground_truth
    files.write_report(out / "ground_truth.csv", [gt.report])
    files.dump_json(
        out / "ground_truth.json",
        {
            "schema": files.SCHEMA,
            "kind": "ground-truth",
            "sync_offset_s": gt.sync_offset_ns / NS_PER_S,
            "contact_time_s": gt.contact_time_ns / NS_PER_S,
            "report": "ground_truth.csv",
        },
    )
    manifest = {
        "schema": files.SCHEMA,
        "kind": "trial-manifest",
        "participant": cfg.participant,
        "group": cfg.group,
        "dominant_hand": cfg.dominant_hand,
        "trial": cfg.trial,
        "instruments": instruments,
        "reference_logs": {cam: f"poses/cam-{cam}.csv" for cam in trial.logs},
        "reference_bodies": {cam: f"ref-{cam}" for cam in trial.logs},
        "annotations": "annotations.csv",
        "video_contact_s": cfg.video_contact_s,
        "reference_calibration": "calibration/reference.json",
    }
    files.dump_json(out / "manifest.json", manifest)
    return out / "manifest.json"


def file_digest(folder) -> str:
    """SHA-256 over every file below ``folder`` (relative path and contents)."""
    h = hashlib.sha256()
    root = Path(folder)
    for p in sorted(x for x in root.rglob("*") if x.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# cohort presets (synthetic; shaped after the reported group trends only)


@dataclass(frozen=True)
class GroupProfile:
    scissors_s: float  # mean total scissors time per trial
    aspirator_s: float  # mean total aspirator time per trial
    idle_s: float  # mean total pause time per trial
    separation_mm: float  # distance between the hands' work centres
    coordination: float  # share of aspirator use overlapped by the bipolar


GROUP_PROFILES = {
    "Student": GroupProfile(24.0, 16.0, 14.0, 34.0, 0.70),
    "Junior": GroupProfile(18.0, 19.0, 10.0, 29.0, 0.78),
    "Senior": GroupProfile(11.0, 24.0, 7.0, 24.0, 0.86),
    "Expert": GroupProfile(9.0, 25.0, 6.0, 22.0, 0.90),
}
COHORT_PRESETS = {"cohort-47x3": ((14, 14, 11, 8), 3)}


def cohort_schedule(rng: np.random.Generator, profile: GroupProfile, participant_effect: float) -> tuple[dict, float]:
    """Alternating scissors and aspirator blocks in the right hand, bipolar alongside."""
    scale = max(0.4, 1.0 + participant_effect)
    s_tot = max(2.0, profile.scissors_s * scale * rng.lognormal(0, 0.1))
    a_tot = max(4.0, profile.aspirator_s / scale * rng.lognormal(0, 0.1))
    idle = max(1.0, profile.idle_s * rng.lognormal(0, 0.15))
    s_blocks = [0.6 * s_tot, 0.4 * s_tot]
    a_blocks = [0.5 * a_tot, 0.5 * a_tot]
    gap = 2.0
    t = 5.0
    sched = {"scissors": [], "aspirator": [], "bipolar": []}
    for s_len, a_len in zip(s_blocks, a_blocks):
        sched["scissors"].append((t, t + s_len))
        sched["bipolar"].append((t, t + s_len))
        t += s_len + gap + idle / 4
        cover = float(np.clip(profile.coordination + rng.normal(0, 0.04), 0.3, 1.0))
        sched["aspirator"].append((t, t + a_len))
        sched["bipolar"].append((t + (1 - cover) * a_len, t + a_len))
        t += a_len + gap + idle / 4
    duration = t + 1.0
    return {k: [(round(a, 3), round(b, 3)) for a, b in v] for k, v in sched.items()}, duration


def cohort_configs(preset: str, seed: int = 0, **overrides) -> list[SimConfig]:
    """One config per trial of a synthetic cohort preset."""
    if preset not in COHORT_PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}; choose from {sorted(COHORT_PRESETS)}")
    sizes, trials = COHORT_PRESETS[preset]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0407]))
    out = []
    pid = 0
    for group, size in zip(GROUP_ORDER, sizes):
        prof = GROUP_PROFILES[group]
        for _ in range(size):
            pid += 1
            effect = float(rng.normal(0, 0.15))
            sep = float(prof.separation_mm * rng.lognormal(0, 0.08))
            for trial in range(1, trials + 1):
                sched, duration = cohort_schedule(rng, prof, effect)
                trial_seed = int(rng.integers(0, 2**63))
                out.append(
                    layout_trial(
                        trial_seed, sched, duration, separation_mm=sep,
                        participant=f"P{pid:03d}", group=group, trial=trial, **overrides,
                    )
                )
    return out


def synth_metric_cohort(
    seed: int,
    sizes: Sequence[int] = (14, 14, 11, 8),
    trials: int = 3,
    effect: Sequence[float] | None = None,
    participant_sd: float = 1.0,
    trial_sd: float = 1.0,
) -> list[GroupSample]:
    """Per-trial values of one metric for a synthetic cohort.

    Each participant draws a random intercept; ``effect`` shifts group means
    (all zero gives the null hypothesis).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57A7]))
    effect = effect or [0.0] * len(sizes)
    out = []
    pid = 0
    for group, size, shift in zip(GROUP_ORDER, sizes, effect):
        for _ in range(size):
            pid += 1
            mu = shift + rng.normal(0, participant_sd)
            out.append(GroupSample(group, f"P{pid:03d}", tuple(mu + rng.normal(0, trial_sd, size=trials))))
    return out
