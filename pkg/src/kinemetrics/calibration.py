"""Pivot and reference-marker calibration.

Pivot calibration finds the tip offset ``p`` (tool-body frame) and the
stationary pivot ``g`` (camera frame) minimising ``sum ||R_i p + t_i - g||^2``
over poses recorded while the instrument is swivelled about its tip.

Reference calibration averages the relative transform between the two
reference markers seen together by one camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateRotations, NoPairs, TooFewSamples
from .pose import RigidTransform, quat_angle

MIN_COVERAGE_DEG = 15.0
# normal equations are abandoned for an orthogonal solve above this
MAX_CONDITION = 1e8
# converts a rotation deviation to mm when reporting reference residuals
LEVER_ARM_MM = 100.0


@dataclass(frozen=True)
class PivotCalibration:
    tip_offset: np.ndarray
    pivot_point: np.ndarray
    rms_residual: float
    sample_count: int
    rotation_coverage_deg: float

    @property
    def tip_transform(self) -> RigidTransform:
        """``T_ToolTip^Tool``; the tip is a point so its rotation is identity."""
        return RigidTransform(translation=self.tip_offset)


@dataclass(frozen=True)
class ReferenceCalibration:
    left_to_right: RigidTransform
    rms_residual: float
    pair_count: int


def _quats(samples: Sequence[RigidTransform]) -> np.ndarray:
    return np.array([s.rotation for s in samples])


def rotation_coverage(samples: Sequence[RigidTransform]) -> float:
    """Largest pairwise geodesic angle between sample rotations, in degrees."""
    if len(samples) < 2:
        raise TooFewSamples("rotation coverage needs at least 2 samples")
    q = _quats(samples)
    # |<q_i, q_j>| = cos(angle / 2); chunked to bound memory for long recordings
    best, pair = 2.0, (0, 0)
    chunk = 1024
    for start in range(0, len(q), chunk):
        dots = np.abs(q[start : start + chunk] @ q.T)
        i, j = np.unravel_index(np.argmin(dots), dots.shape)
        if dots[i, j] < best:
            best, pair = float(dots[i, j]), (start + i, j)
    # the stable angle formula on the extreme pair; acos loses digits near 1
    return math.degrees(float(quat_angle(q[pair[0]], q[pair[1]])))


def pivot_calibrate(samples: Sequence[RigidTransform]) -> PivotCalibration:
    n = len(samples)
    if n < 3:
        raise TooFewSamples(f"pivot calibration needs at least 3 poses, got {n}")
    coverage = rotation_coverage(samples)
    if coverage < MIN_COVERAGE_DEG:
        raise DegenerateRotations(
            f"rotation coverage {coverage:.3g} deg is below {MIN_COVERAGE_DEG:g} deg"
        )

    R = np.array([s.rotation_matrix for s in samples])
    t = np.array([s.translation for s in samples])
    A = np.zeros((3 * n, 6))
    A[:, :3] = R.reshape(3 * n, 3)
    A[:, 3:] = np.tile(-np.eye(3), (n, 1))
    b = -t.reshape(3 * n)

    ata = A.T @ A
    atb = A.T @ b
    if np.linalg.cond(ata) <= MAX_CONDITION:
        x = np.linalg.solve(ata, atb)
    else:
        x = np.linalg.lstsq(A, b, rcond=None)[0]
    offset, pivot = x[:3], x[3:]

    resid = np.einsum("nij,j->ni", R, offset) + t - pivot
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return PivotCalibration(offset, pivot, rms, n, coverage)


def average_rotation(quats: np.ndarray) -> np.ndarray:
    """Dominant eigenvector of the accumulated outer products ``sum q q^T``."""
    quats = np.asarray(quats, dtype=float)
    m = quats.T @ quats
    _, vecs = np.linalg.eigh(m)
    q = vecs[:, -1]
    if np.dot(q, quats[0]) < 0:
        q = -q
    return q / np.linalg.norm(q)


def reference_calibrate(pairs: Sequence[tuple[RigidTransform, RigidTransform]]) -> ReferenceCalibration:
    """Average ``invert(right) ∘ left`` over simultaneous reference observations."""
    if len(pairs) == 0:
        raise NoPairs("reference calibration needs at least one simultaneous pair")
    rel = [right.inverse().compose(left) for right, left in pairs]
    q = np.array([r.rotation for r in rel])
    signs = np.where(q @ q[0] < 0, -1.0, 1.0)
    q = q * signs[:, None]
    t = np.array([r.translation for r in rel])

    if np.all(q == q[0]):
        q_mean = q[0]
    else:
        q_mean = average_rotation(q)
    # offsets from the first sample keep identical inputs bit-exact
    t_mean = t[0] + (t - t[0]).sum(axis=0) / len(t)
    mean = RigidTransform(q_mean, t_mean)

    if np.all(q == q[0]) and np.all(t == t[0]):
        rms = 0.0
    else:
        ang = quat_angle(mean.rotation, q)
        dev2 = np.sum((t - t_mean) ** 2, axis=1) + (LEVER_ARM_MM * ang) ** 2
        rms = float(np.sqrt(np.mean(dev2)))
    return ReferenceCalibration(mean, rms, len(pairs))
