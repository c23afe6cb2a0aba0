import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import homogeneous
from kinemetrics.errors import EmptyTrack
from kinemetrics.pose import (
    PoseSample,
    PoseTrack,
    RigidTransform,
    Trajectory,
    compose,
    fix_hemisphere,
    invert,
    matrix_to_quat,
    quat_angle,
    quat_from_axis_angle,
    quat_normalize,
    quat_to_matrix,
    resample_uniform,
    s_to_ns,
    slerp,
    split_runs,
    transform_point,
    uniform_grid,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
quat_raw = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3)


@st.composite
def transforms(draw):
    q = draw(quat_raw)
    p = draw(arrays(np.float64, 3, elements=finite))
    return RigidTransform(q, p)


def random_transform(rng, scale=100.0):
    return RigidTransform(quat_normalize(rng.normal(size=4)), rng.normal(scale=scale, size=3))


def close_transforms(a, b, tol=1e-9):
    return a.angle_to(b) < tol and np.linalg.norm(a.translation - b.translation) < tol


# --- analytic examples ---------------------------------------------------


def test_rz90_rotates_x_to_y():
    rz = RigidTransform(quat_from_axis_angle((0, 0, 1), math.pi / 2))
    assert np.allclose(transform_point(rz, (1, 0, 0)), (0, 1, 0), atol=1e-15)


def test_rz90_plus_translation():
    t = RigidTransform(quat_from_axis_angle((0, 0, 1), math.pi / 2), (1, 0, 0))
    assert np.allclose(transform_point(t, (1, 0, 0)), (1, 1, 0), atol=1e-15)


def test_identity_and_pure_translation():
    assert np.array_equal(transform_point(RigidTransform(), (1, 2, 3)), (1, 2, 3))
    assert np.array_equal(transform_point(RigidTransform(translation=(0, 0, 100)), (0, 0, 0)), (0, 0, 100))


def test_identity_compose(rng):
    t = random_transform(rng)
    assert close_transforms(compose(RigidTransform.identity(), t), t)
    assert close_transforms(compose(t, RigidTransform.identity()), t)


def test_inverse_compose_is_identity(rng):
    for _ in range(100):
        t = random_transform(rng, 1000)
        assert close_transforms(compose(t, invert(t)), RigidTransform(), 1e-9)
        assert close_transforms(compose(invert(t), t), RigidTransform(), 1e-9)


def test_compose_matches_matrix_product(rng):
    for _ in range(50):
        a, b = random_transform(rng), random_transform(rng)
        c = compose(a, b)
        expected = homogeneous(a.rotation, a.translation) @ homogeneous(b.rotation, b.translation)
        assert np.allclose(c.as_matrix(), expected, atol=1e-10)


def test_quaternion_matrix_roundtrip(rng):
    for _ in range(200):
        q = quat_normalize(rng.normal(size=4))
        back = matrix_to_quat(quat_to_matrix(q))
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-12


def test_matrix_to_quat_all_branches():
    for axis in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
        q = quat_from_axis_angle(axis, math.radians(179))
        assert quat_angle(matrix_to_quat(quat_to_matrix(q)), q) < 1e-12


def test_from_matrix_rejects_bad_shape():
    with pytest.raises(ValueError):
        RigidTransform.from_matrix(np.eye(3))


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat_normalize(np.zeros(4))


# --- properties ------------------------------------------------------------


@given(st.lists(transforms(), min_size=1, max_size=40))
def test_norm_preserved_under_composition(ts):
    acc = RigidTransform()
    for t in ts:
        acc = compose(acc, t)
        assert abs(1 - np.linalg.norm(acc.rotation)) < 1e-9


def test_norm_preserved_over_10k_compositions(rng):
    acc = RigidTransform()
    qs = quat_normalize(rng.normal(size=(10_000, 4)))
    for q in qs:
        acc = compose(acc, RigidTransform(q, (1.0, 0.0, 0.0)))
    assert abs(1 - np.linalg.norm(acc.rotation)) < 1e-9


@given(transforms(), transforms(), transforms())
def test_compose_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert left.angle_to(right) < 1e-9
    scale = 1 + sum(np.linalg.norm(x.translation) for x in (a, b, c))
    assert np.linalg.norm(left.translation - right.translation) < 1e-9 * scale


@given(transforms(), arrays(np.float64, 3, elements=finite))
def test_apply_inverse_roundtrip(t, p):
    back = t.inverse().apply(t.apply(p))
    assert np.allclose(back, p, atol=1e-9 * (1 + np.abs(t.translation).max() + np.abs(p).max()))


@given(arrays(np.float64, (20, 4), elements=st.floats(-1, 1)).filter(lambda q: np.all(np.linalg.norm(q, axis=1) > 1e-3)))
def test_hemisphere_continuity(q):
    out = fix_hemisphere(quat_normalize(q))
    assert np.all(np.einsum("ij,ij->i", out[1:], out[:-1]) >= 0)
    # every row is the same rotation as before
    assert np.all(np.abs(np.abs(np.einsum("ij,ij->i", out, quat_normalize(q))) - 1) < 1e-12)


def test_slerp_endpoints_and_midpoint():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = quat_from_axis_angle((0, 0, 1), math.pi / 2)
    out = slerp(q0[None], q1[None], [0.0])[0]
    assert np.allclose(out, q0)
    mid = slerp(q0[None], q1[None], [0.5])[0]
    assert abs(quat_angle(mid, quat_from_axis_angle((0, 0, 1), math.pi / 4))) < 1e-12


def test_slerp_takes_shortest_arc():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = -quat_from_axis_angle((1, 0, 0), 0.2)
    mid = slerp(q0[None], q1[None], [0.5])[0]
    assert quat_angle(mid, quat_from_axis_angle((1, 0, 0), 0.1)) < 1e-12


# --- tracks and resampling ---------------------------------------------------


def track(t, p=None, visible=None, q=None):
    t = np.asarray(t, dtype=np.int64)
    if p is None:
        p = np.zeros((len(t), 3))
    if q is None:
        q = np.tile([1.0, 0, 0, 0], (len(t), 1))
    return PoseTrack("b", "right", t, q, p, visible)


def test_track_rejects_non_increasing():
    with pytest.raises(ValueError):
        track([0, 5, 5])


def test_track_from_samples_roundtrip(rng):
    samples = [PoseSample(i * 10, random_transform(rng), bool(i % 3)) for i in range(6)]
    tr = PoseTrack.from_samples("b", "left", samples)
    assert [s.t for s in tr] == [s.t for s in samples]
    assert [s.visible for s in tr] == [s.visible for s in samples]
    assert PoseTrack.from_samples("b", "left", []).__len__() == 0


def test_empty_track_span():
    with pytest.raises(EmptyTrack):
        track([]).span()


def test_resample_two_samples_ten_hz():
    out = resample_uniform(track([0, s_to_ns(1.0)], [[0, 0, 0], [10, 0, 0]]), 10.0, 1500.0)
    assert len(out) == 11
    assert np.allclose(out.p[:, 0], np.arange(11))


def test_resample_gap_gives_singletons():
    out = resample_uniform(track([0, s_to_ns(1.0)], [[0, 0, 0], [10, 0, 0]]), 10.0, 150.0)
    assert list(out.t) == [0, s_to_ns(1.0)]


def test_resample_line_within_1e9():
    t = np.cumsum(np.r_[0, np.random.default_rng(1).integers(7, 13, size=300)]) * 1_000_000
    x = 10.0 * t / 1e9
    p = np.c_[x, 2 * x, -x]
    out = resample_uniform(track(t, p), 100.0, 150.0)
    xs = 10.0 * out.t / 1e9
    assert np.abs(out.p - np.c_[xs, 2 * xs, -xs]).max() < 1e-9


def test_resample_never_extrapolates(rng):
    t = np.sort(rng.choice(5_000, size=200, replace=False)).astype(np.int64) * 1_000_000
    vis = rng.random(200) > 0.2
    out = resample_uniform(track(t, rng.normal(size=(200, 3)), vis), 100.0, 50.0)
    vt = t[vis]
    segs = split_runs(vt, 50 * 1_000_000)
    spans = [(vt[s][0], vt[s][-1]) for s in segs]
    for x in out.t:
        assert any(a <= x <= b for a, b in spans)


def test_resample_empty_raises():
    with pytest.raises(EmptyTrack):
        resample_uniform(track([0, 10], visible=[False, False]))


def test_resample_interpolates_rotation():
    q = [[1.0, 0, 0, 0], quat_from_axis_angle((0, 1, 0), 0.1)]
    out = resample_uniform(track([0, 100_000_000], q=q), 100.0, 150.0)
    angles = [quat_angle(out.q[0], qq) for qq in out.q]
    assert np.allclose(angles, np.linspace(0, 0.1, 11), atol=1e-12)


def test_uniform_grid_endpoints():
    g = uniform_grid(5, 5 + 1_000_000_000, 100.0)
    assert g[0] == 5 and g[-1] == 5 + 1_000_000_000 and len(g) == 101


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0, 0], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Trajectory([0], np.zeros((2, 3)))
