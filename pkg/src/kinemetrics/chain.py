"""Resolve instrument tips into the global (right-reference) frame.

Right camera::

    p(t) = invert(T_RightRef^Cam) ∘ T_Tool^Cam · tip

Left camera::

    p(t) = T_LeftRef^RightRef ∘ invert(T_LeftRef^CamLeft) ∘ T_Tool^CamLeft · tip

Reference poses are matched to tool samples by nearest timestamp; a tool
sample with no visible reference within the tolerance is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .calibration import PivotCalibration, ReferenceCalibration
from .errors import MissingReferenceCalibration, NoOverlap
from .pose import NS_PER_MS, PoseTrack, Trajectory, quat_to_matrix

REF_MATCH_MS = 50.0
PAIR_MATCH_MS = 10.0

# symbolic frame names used in logs and manifests
GLOBAL_FRAME = "global-ref"
LEFT_REF_FRAME = "left-ref"
CAMERA_FRAMES = {"right": "cam-right", "left": "cam-left"}


def tool_frame(instrument: str) -> str:
    return f"tool:{instrument}"


@dataclass(frozen=True)
class ChainSpec:
    side: Literal["right", "left"]
    tool_track: PoseTrack
    ref_track: PoseTrack
    pivot: PivotCalibration
    ref_cal: ReferenceCalibration | None = None

    def __post_init__(self):
        if self.side not in ("right", "left"):
            raise ValueError(f"side must be 'right' or 'left', not {self.side!r}")


def nearest_index(t_src: np.ndarray, t_query: np.ndarray, tol_ns: float) -> np.ndarray:
    """Index of the nearest ``t_src`` entry for each query, -1 if beyond ``tol_ns``.

    Ties go to the earlier sample.
    """
    t_src = np.asarray(t_src, dtype=np.int64)
    t_query = np.asarray(t_query, dtype=np.int64)
    if len(t_src) == 0:
        return np.full(len(t_query), -1, dtype=np.int64)
    hi = np.clip(np.searchsorted(t_src, t_query), 0, len(t_src) - 1)
    lo = np.clip(hi - 1, 0, len(t_src) - 1)
    d_hi = np.abs(t_src[hi] - t_query)
    d_lo = np.abs(t_src[lo] - t_query)
    idx = np.where(d_lo <= d_hi, lo, hi)
    dist = np.minimum(d_lo, d_hi)
    return np.where(dist <= tol_ns, idx, -1)


def resolve_tip_trajectory(spec: ChainSpec, ref_match_ms: float = REF_MATCH_MS) -> Trajectory:
    if spec.side == "left" and spec.ref_cal is None:
        raise MissingReferenceCalibration("left-camera chain needs a reference calibration")
    tool, ref = spec.tool_track, spec.ref_track
    if not len(tool) or not len(ref) or tool.t[-1] < ref.t[0] or ref.t[-1] < tool.t[0]:
        raise NoOverlap(f"{tool.body_id!r} and {ref.body_id!r} do not overlap in time")

    tool = tool.visible_only()
    ref = ref.visible_only()
    j = nearest_index(ref.t, tool.t, ref_match_ms * NS_PER_MS)
    keep = j >= 0
    j = j[keep]

    R_tool = quat_to_matrix(tool.q[keep])
    p_cam = np.einsum("nij,j->ni", R_tool, spec.pivot.tip_offset) + tool.p[keep]
    R_ref = quat_to_matrix(ref.q[j])
    # invert(T_Ref^Cam) applied to p_cam
    p = np.einsum("nji,nj->ni", R_ref, p_cam - ref.p[j])
    if spec.side == "left":
        p = spec.ref_cal.left_to_right.apply(p)
    return Trajectory(tool.t[keep], p)


def pair_samples(a: Trajectory, b: Trajectory, tol_ms: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices pairing each sample of ``a`` with its nearest in ``b`` within tolerance."""
    j = nearest_index(b.t, a.t, tol_ms * NS_PER_MS)
    i = np.flatnonzero(j >= 0)
    return i, j[i]


def chain_consistency(spec_right: ChainSpec, spec_left: ChainSpec, pair_ms: float = PAIR_MATCH_MS) -> float:
    """RMS distance (mm) between the two resolutions of one tool."""
    a = resolve_tip_trajectory(spec_right)
    b = resolve_tip_trajectory(spec_left)
    i, j = pair_samples(a, b, pair_ms)
    if len(i) == 0:
        raise NoOverlap("the two resolved trajectories share no timestamps")
    d = a.points[i] - b.points[j]
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))
