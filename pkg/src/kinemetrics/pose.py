"""Rigid-body geometry, pose tracks and gap-aware resampling.

Conventions:
    - Quaternions are ``(w, x, y, z)`` numpy arrays, unit norm.
    - A :class:`RigidTransform` ``T_A^B`` maps points expressed in frame A
      into frame B: ``p_B = R @ p_A + t``.
    - Translations are millimetres; timestamps are integer nanoseconds since
      the session epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyTrack

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000

DEFAULT_RATE_HZ = 100.0
DEFAULT_GAP_MS = 150.0

# renormalise only when off by more than this; keeps normalisation idempotent
_NORM_SLACK = 1e-12


def ns_to_s(t_ns) -> float:
    return t_ns / NS_PER_S


def s_to_ns(t_s: float) -> int:
    return int(round(t_s * NS_PER_S))


# ---------------------------------------------------------------------------
# quaternion helpers (vectorised over leading axes)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise ValueError("cannot normalise a zero or non-finite quaternion")
    off = np.abs(n - 1.0) > _NORM_SLACK
    if not np.any(off):
        return q.copy()
    return np.where(off, q / n, q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` (apply b first, then a)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's branch selection), w >= 0."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return np.stack([matrix_to_quat(r) for r in m.reshape(-1, 3, 3)]).reshape(m.shape[:-2] + (4,))
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle (radians, in [0, pi]) between rotations ``a`` and ``b``."""
    rel = quat_multiply(quat_conjugate(a), b)
    vec = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(rel[..., 0]))


def fix_hemisphere(q: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternions have non-negative dot product."""
    q = np.array(q, dtype=float, copy=True)
    if len(q) < 2:
        return q
    dots = np.einsum("ij,ij->i", q[1:], q[:-1])
    # a flip at i propagates to every later sample
    flips = np.cumsum(dots < 0) % 2
    q[1:][flips == 1] *= -1.0
    return q


def slerp(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Shortest-arc spherical interpolation, vectorised over rows."""
    q0 = np.atleast_2d(q0)
    q1 = np.atleast_2d(q1).copy()
    u = np.asarray(u, dtype=float).reshape(-1, 1)
    dot = np.einsum("ij,ij->i", q0, q1)
    q1[dot < 0] *= -1.0
    dot = np.abs(dot).reshape(-1, 1)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    small = theta < 1e-8
    sin_t = np.where(small, 1.0, np.sin(theta))
    w0 = np.where(small, 1.0 - u, np.sin((1.0 - u) * theta) / sin_t)
    w1 = np.where(small, u, np.sin(u * theta) / sin_t)
    out = w0 * q0 + w1 * q1
    return out / np.linalg.norm(out, axis=1, keepdims=True)


# ---------------------------------------------------------------------------


class RigidTransform:
    """Immutable rotation (unit quaternion) plus translation in mm."""

    __slots__ = ("_q", "_t", "_m")

    def __init__(self, rotation=(1.0, 0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        q = quat_normalize(np.asarray(rotation, dtype=float).reshape(4))
        t = np.array(translation, dtype=float).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        self._q = q
        self._t = t
        self._m = None

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape == (4, 4):
            return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])
        if m.shape == (3, 4):
            return cls(matrix_to_quat(m[:, :3]), m[:, 3])
        raise ValueError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")

    @property
    def rotation(self) -> np.ndarray:
        return self._q

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @property
    def rotation_matrix(self) -> np.ndarray:
        if self._m is None:
            m = quat_to_matrix(self._q)
            m.flags.writeable = False
            self._m = m
        return self._m

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation_matrix
        out[:3, 3] = self._t
        return out

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            quat_multiply(self._q, other._q),
            self.rotation_matrix @ other._t + self._t,
        )

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        q_inv = quat_conjugate(self._q)
        return RigidTransform(q_inv, -(self.rotation_matrix.T @ self._t))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix.T + self._t

    def angle_to(self, other: RigidTransform) -> float:
        return float(quat_angle(self._q, other._q))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self._q)
        t = ", ".join(f"{v:.6g}" for v in self._t)
        return f"RigidTransform(rotation=[{q}], translation=[{t}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseSample:
    t: int
    pose: RigidTransform
    visible: bool


class PoseTrack:
    """Time-stamped poses of one rigid body seen by one camera.

    Stored column-wise; quaternions are normalised and made
    hemisphere-continuous on construction. Invisible samples keep whatever
    pose values they were given, consumers must ignore them.
    """

    __slots__ = ("body_id", "camera_id", "t", "q", "p", "visible")

    def __init__(self, body_id: str, camera_id: str, t, q, p, visible=None):
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        q = np.asarray(q, dtype=float).reshape(-1, 4)
        p = np.asarray(p, dtype=float).reshape(-1, 3)
        n = len(t)
        if visible is None:
            visible = np.ones(n, dtype=bool)
        visible = np.asarray(visible, dtype=bool).reshape(-1)
        if not (len(q) == len(p) == len(visible) == n):
            raise ValueError("column lengths differ")
        if n > 1 and np.any(np.diff(t) <= 0):
            raise ValueError(f"timestamps of {body_id!r} are not strictly increasing")
        if n:
            q = fix_hemisphere(quat_normalize(q))
        for arr in (t, q, p, visible):
            arr.flags.writeable = False
        self.body_id = body_id
        self.camera_id = camera_id
        self.t = t
        self.q = q
        self.p = p
        self.visible = visible

    @classmethod
    def from_samples(cls, body_id: str, camera_id: str, samples: Sequence[PoseSample]) -> PoseTrack:
        if not samples:
            return cls(body_id, camera_id, [], np.zeros((0, 4)), np.zeros((0, 3)), [])
        return cls(
            body_id,
            camera_id,
            [s.t for s in samples],
            [s.pose.rotation for s in samples],
            [s.pose.translation for s in samples],
            [s.visible for s in samples],
        )

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[PoseSample]:
        for i in range(len(self.t)):
            yield self.sample(i)

    @property
    def samples(self) -> list[PoseSample]:
        return list(self)

    def sample(self, i: int) -> PoseSample:
        return PoseSample(int(self.t[i]), RigidTransform(self.q[i], self.p[i]), bool(self.visible[i]))

    def transforms(self) -> list[RigidTransform]:
        return [RigidTransform(q, p) for q, p in zip(self.q, self.p)]

    def visible_only(self) -> PoseTrack:
        m = self.visible
        return PoseTrack(self.body_id, self.camera_id, self.t[m], self.q[m], self.p[m], self.visible[m])

    def span(self) -> tuple[int, int]:
        if not len(self.t):
            raise EmptyTrack(f"track {self.body_id!r} is empty")
        return int(self.t[0]), int(self.t[-1])

    def __repr__(self) -> str:
        return (
            f"PoseTrack(body_id={self.body_id!r}, camera_id={self.camera_id!r}, "
            f"n={len(self)}, visible={int(self.visible.sum())})"
        )


class Trajectory:
    """Tip positions (mm) in the global frame at strictly increasing times."""

    __slots__ = ("t", "points")

    def __init__(self, t, points):
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(t) != len(points):
            raise ValueError("timestamp and point counts differ")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps are not strictly increasing")
        t.flags.writeable = False
        points.flags.writeable = False
        self.t = t
        self.points = points

    def __len__(self) -> int:
        return len(self.t)

    def __repr__(self) -> str:
        return f"Trajectory(n={len(self)})"


def split_runs(t: np.ndarray, max_gap_ns: float) -> list[slice]:
    """Slices of maximal runs whose consecutive gaps are <= ``max_gap_ns``."""
    n = len(t)
    if n == 0:
        return []
    breaks = np.flatnonzero(np.diff(t) > max_gap_ns) + 1
    edges = np.concatenate([[0], breaks, [n]])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def uniform_grid(t0: int, t1: int, rate_hz: float) -> np.ndarray:
    """Grid ``t0 + round(k / rate)`` for every k whose point does not pass ``t1``."""
    period = NS_PER_S / rate_hz
    k_max = int(math.floor((t1 - t0) / period + 1e-9))
    k = np.arange(k_max + 1, dtype=np.float64)
    grid = t0 + np.rint(k * period).astype(np.int64)
    return grid[grid <= t1]


def resample_uniform(
    track: PoseTrack,
    rate_hz: float = DEFAULT_RATE_HZ,
    gap_threshold_ms: float = DEFAULT_GAP_MS,
) -> PoseTrack:
    """Resample visible samples onto a uniform grid, segment by segment.

    Segments break wherever consecutive visible samples are more than
    ``gap_threshold_ms`` apart; nothing is interpolated across a break or
    extrapolated past a segment end. Singleton segments pass through as is.
    """
    if rate_hz <= 0 or gap_threshold_ms <= 0:
        raise ValueError("rate and gap threshold must be positive")
    vis = track.visible_only()
    if not len(vis):
        raise EmptyTrack(f"track {track.body_id!r} has no visible samples")

    out_t, out_q, out_p = [], [], []
    for seg in split_runs(vis.t, gap_threshold_ms * NS_PER_MS):
        st, sq, sp = vis.t[seg], vis.q[seg], vis.p[seg]
        if len(st) == 1:
            out_t.append(st)
            out_q.append(sq)
            out_p.append(sp)
            continue
        grid = uniform_grid(int(st[0]), int(st[-1]), rate_hz)
        idx = np.clip(np.searchsorted(st, grid, side="right") - 1, 0, len(st) - 2)
        t0, t1 = st[idx], st[idx + 1]
        u = (grid - t0) / (t1 - t0)
        q = slerp(sq[idx], sq[idx + 1], u)
        p = sp[idx] + u[:, None] * (sp[idx + 1] - sp[idx])
        # grid points that coincide with a source sample copy it verbatim
        hit = np.searchsorted(st, grid)
        hit = np.minimum(hit, len(st) - 1)
        exact = st[hit] == grid
        q[exact] = sq[hit[exact]]
        p[exact] = sp[hit[exact]]
        out_t.append(grid)
        out_q.append(q)
        out_p.append(p)

    t = np.concatenate(out_t)
    return PoseTrack(track.body_id, track.camera_id, t, np.concatenate(out_q), np.concatenate(out_p))
