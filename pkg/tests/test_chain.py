import numpy as np
import pytest

from oracles import homogeneous, tip_in_reference
from kinemetrics.calibration import PivotCalibration, ReferenceCalibration
from kinemetrics.chain import (
    CAMERA_FRAMES,
    GLOBAL_FRAME,
    LEFT_REF_FRAME,
    ChainSpec,
    chain_consistency,
    nearest_index,
    resolve_tip_trajectory,
    tool_frame,
)
from kinemetrics.errors import MissingReferenceCalibration, NoOverlap
from kinemetrics.pose import PoseTrack, RigidTransform, compose, quat_normalize
from kinemetrics.sim import two_camera_scene

MS = 1_000_000


def pivot(offset):
    return PivotCalibration(np.asarray(offset, dtype=float), np.zeros(3), 0.0, 0, 0.0)


def static_track(body, t, pose=RigidTransform(), visible=None):
    n = len(t)
    return PoseTrack(body, "right", t, np.tile(pose.rotation, (n, 1)), np.tile(pose.translation, (n, 1)), visible)


def test_frame_names_are_unique():
    names = [GLOBAL_FRAME, LEFT_REF_FRAME, *CAMERA_FRAMES.values(), *(tool_frame(i) for i in ("bipolar", "aspirator"))]
    assert len(set(names)) == len(names)


def test_identity_chain():
    t = np.arange(10) * 10 * MS
    spec = ChainSpec("right", static_track("tool", t), static_track("ref", t), pivot((0, 0, 100)))
    traj = resolve_tip_trajectory(spec)
    assert np.array_equal(traj.points, np.tile([0.0, 0.0, 100.0], (10, 1)))
    assert np.array_equal(traj.t, t)


def test_left_without_reference_calibration():
    t = np.arange(3) * MS
    spec = ChainSpec("left", static_track("tool", t), static_track("ref", t), pivot((0, 0, 1)))
    with pytest.raises(MissingReferenceCalibration):
        resolve_tip_trajectory(spec)


def test_disjoint_tracks_raise():
    spec = ChainSpec("right", static_track("tool", np.arange(3) * MS), static_track("ref", (np.arange(3) + 100) * MS), pivot((0, 0, 1)))
    with pytest.raises(NoOverlap):
        resolve_tip_trajectory(spec)


def test_invalid_side():
    with pytest.raises(ValueError):
        ChainSpec("top", static_track("a", [0]), static_track("b", [0]), pivot((0, 0, 0)))


@pytest.mark.parametrize("seed", range(5))
def test_scene_recovers_global_path(seed):
    right, left, truth = two_camera_scene(seed, n=300)
    for spec in (right, left):
        traj = resolve_tip_trajectory(spec)
        assert np.array_equal(traj.t, truth.t)
        assert np.abs(traj.points - truth.points).max() < 1e-6


def test_matches_matrix_oracle():
    right, left, _ = two_camera_scene(11, n=50)
    for spec in (right, left):
        traj = resolve_tip_trajectory(spec)
        l2r = None
        if spec.side == "left":
            l2r = homogeneous(spec.ref_cal.left_to_right.rotation, spec.ref_cal.left_to_right.translation)
        for k in range(len(traj)):
            expected = tip_in_reference(
                spec.tool_track.q[k], spec.tool_track.p[k], spec.ref_track.q[k], spec.ref_track.p[k],
                spec.pivot.tip_offset, l2r,
            )
            assert np.allclose(traj.points[k], expected, atol=1e-9)


def test_consistency_noise_free_and_noisy():
    right, left, _ = two_camera_scene(3, n=500)
    assert chain_consistency(right, left) < 1e-6
    right, left, _ = two_camera_scene(3, n=500, noise_sigma=0.1)
    assert chain_consistency(right, left) < 0.5


def test_consistency_disjoint():
    right, left, _ = two_camera_scene(0, n=50)
    shifted = PoseTrack("tool", "left", left.tool_track.t + 10**10, left.tool_track.q, left.tool_track.p)
    ref = PoseTrack("ref-left", "left", left.ref_track.t + 10**10, left.ref_track.q, left.ref_track.p)
    with pytest.raises(NoOverlap):
        chain_consistency(right, ChainSpec("left", shifted, ref, left.pivot, left.ref_cal))


def test_rigid_invariance_right_side(rng):
    right, _, _ = two_camera_scene(5, n=200)
    g = RigidTransform(quat_normalize(rng.normal(size=4)), rng.normal(scale=500, size=3))

    def moved(tr):
        poses = [compose(g, x) for x in tr.transforms()]
        return PoseTrack(tr.body_id, tr.camera_id, tr.t, [p.rotation for p in poses], [p.translation for p in poses])

    a = resolve_tip_trajectory(right)
    b = resolve_tip_trajectory(ChainSpec("right", moved(right.tool_track), moved(right.ref_track), right.pivot))
    assert np.abs(a.points - b.points).max() < 1e-9


def test_dropped_sample_contract(rng):
    t = np.arange(200) * 10 * MS
    tool_vis = rng.random(200) > 0.3
    ref_vis = rng.random(200) > 0.8  # long reference occlusions drop samples
    spec = ChainSpec(
        "right",
        static_track("tool", t, visible=tool_vis),
        static_track("ref", t, visible=ref_vis),
        pivot((0, 0, 10)),
    )
    traj = resolve_tip_trajectory(spec, ref_match_ms=15)
    assert len(traj) <= tool_vis.sum()
    assert set(traj.t) <= set(t[tool_vis])
    ref_t = t[ref_vis]
    for x in traj.t:
        assert np.min(np.abs(ref_t - x)) <= 15 * MS


def test_nearest_index_ties_and_tolerance():
    src = np.array([0, 10, 20])
    assert list(nearest_index(src, [5, 15, 26, 100], 5)) == [0, 1, -1, -1]
    assert list(nearest_index(np.array([], dtype=np.int64), [1], 5)) == [-1]


def test_left_chain_uses_reference_calibration():
    t = np.arange(5) * MS
    l2r = RigidTransform(translation=(100, 0, 0))
    spec = ChainSpec("left", static_track("tool", t), static_track("ref", t), pivot((0, 0, 5)), ReferenceCalibration(l2r, 0.0, 1))
    assert np.allclose(resolve_tip_trajectory(spec).points, [[100, 0, 5]] * 5)
