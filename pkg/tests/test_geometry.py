import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from posepipe import geometry
from posepipe.datamodel import (
    FullPerspective,
    Joints3D,
    Keypoints2D,
    SkeletonId,
    WeakPerspective,
)
from posepipe.errors import (
    BehindCamera,
    DegenerateInput,
    NoMapping,
    NonFinite,
    NotARotation,
    ZeroQuaternion,
)


def test_zero_rotvec_is_identity():
    assert np.allclose(geometry.rotvec_to_matrix([0.0, 0.0, 0.0]), np.eye(3))


def test_quarter_turn_about_x():
    m = geometry.rotvec_to_matrix([np.pi / 2.0, 0.0, 0.0])
    assert np.allclose(m @ np.array([0.0, 1.0, 0.0]), [0.0, 0.0, 1.0], atol=1e-12)


def test_rotvec_matrix_agrees_with_quaternion_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        r = oracles.random_rotvec(rng)
        ours = geometry.rotvec_to_matrix(r)
        theirs = oracles.matrix_from_rotvec(r)
        assert np.abs(ours - theirs).max() < 1e-12


def test_small_angle_series_branch():
    r = np.array([3e-9, -2e-9, 1e-9])
    m = geometry.rotvec_to_matrix(r)
    assert np.abs(m - oracles.matrix_from_rotvec(r)).max() < 1e-15


def test_rotvec_nonfinite_rejected():
    with pytest.raises(NonFinite):
        geometry.rotvec_to_matrix([np.nan, 0.0, 0.0])


def test_matrix_to_rotvec_identity_and_pi():
    assert np.allclose(geometry.matrix_to_rotvec(np.eye(3)), [0.0, 0.0, 0.0])
    half_turn = np.diag([-1.0, -1.0, 1.0])  # pi about z
    r = geometry.matrix_to_rotvec(half_turn)
    assert np.allclose(r, [0.0, 0.0, np.pi], atol=1e-9)
    assert np.linalg.norm(r) <= np.pi + 1e-12


def test_matrix_roundtrip_geodesic_error():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        r = oracles.random_rotvec(rng)
        m = geometry.rotvec_to_matrix(r)
        back = geometry.rotvec_to_matrix(geometry.matrix_to_rotvec(m))
        assert oracles.geodesic_angle(m, back) < 1e-9


def test_matrix_to_rotvec_reorthonormalizes_small_noise():
    rng = np.random.default_rng(3)
    r = oracles.random_rotvec(rng)
    m = geometry.rotvec_to_matrix(r) + rng.normal(scale=1e-7, size=(3, 3))
    back = geometry.rotvec_to_matrix(geometry.matrix_to_rotvec(m))
    assert oracles.geodesic_angle(geometry.rotvec_to_matrix(r), back) < 1e-5


def test_matrix_to_rotvec_rejects_non_rotation():
    with pytest.raises(NotARotation):
        geometry.matrix_to_rotvec(np.diag([2.0, 1.0, 1.0]))


def test_quat_identity_and_pi():
    assert np.allclose(geometry.quat_to_rotvec([1.0, 0.0, 0.0, 0.0]), 0.0)
    assert np.allclose(geometry.quat_to_rotvec([0.0, 1.0, 0.0, 0.0]), [np.pi, 0, 0])


def test_quat_sign_equivalence_and_zero():
    rng = np.random.default_rng(9)
    q = rng.normal(size=4)
    assert np.allclose(
        geometry.quat_to_rotvec(q), geometry.quat_to_rotvec(-q), atol=1e-12
    )
    with pytest.raises(ZeroQuaternion):
        geometry.quat_to_rotvec([0.0, 0.0, 0.0, 0.0])


def test_quat_path_matches_matrix_path():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        ours = geometry.rotvec_to_matrix(geometry.quat_to_rotvec(q))
        theirs = oracles.matrix_from_quat(q)
        assert np.abs(ours - theirs).max() < 1e-12


def test_sixd_identity_and_scale_invariance():
    assert np.allclose(geometry.sixd_to_matrix([1, 0, 0], [0, 1, 0]), np.eye(3))
    assert np.allclose(geometry.sixd_to_matrix([2, 0, 0], [0, 3, 0]), np.eye(3))


def test_sixd_reconstructs_random_rotations():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        m = oracles.matrix_from_rotvec(oracles.random_rotvec(rng))
        rebuilt = geometry.sixd_to_matrix(m[:, 0], m[:, 1])
        assert np.abs(rebuilt - m).max() < 1e-12


def test_sixd_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        geometry.sixd_to_matrix([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(DegenerateInput):
        geometry.sixd_to_matrix([1.0, 0.0, 0.0], [2.0, 0.0, 0.0])


def test_rotation_paths_commute():
    rng = np.random.default_rng(17)
    for _ in range(300):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        via_rotvec = geometry.rotvec_to_matrix(geometry.quat_to_rotvec(q))
        direct = oracles.matrix_from_quat(q)
        assert np.abs(via_rotvec - direct).max() < 1e-10


def test_weak_projection_basics():
    cam = WeakPerspective(1.0, 0.0, 0.0)
    assert np.allclose(geometry.project(cam, [3.0, 4.0, 99.0]), [3.0, 4.0])
    scaled = WeakPerspective(2.0, 0.0, 0.0)
    pts = np.array([[1.0, 2.0, 0.0], [3.0, -1.0, 5.0]])
    assert np.allclose(
        geometry.project(scaled, pts), 2.0 * geometry.project(cam, pts)
    )


def test_full_projection_optical_axis():
    cam = FullPerspective(fx=100.0, fy=100.0, cx=0.0, cy=0.0)
    assert np.allclose(geometry.project(cam, [0.0, 0.0, 2.0]), [0.0, 0.0])


def test_full_projection_behind_camera():
    cam = FullPerspective(fx=100.0, fy=100.0, cx=0.0, cy=0.0)
    with pytest.raises(BehindCamera):
        geometry.project(cam, [0.0, 0.0, -1.0])


def test_full_projection_matches_synthscene_closed_form():
    from posepipe import synthscene

    rng = np.random.default_rng(23)
    cam = FullPerspective(
        fx=50.0, fy=45.0, cx=31.0, cy=22.0,
        rotation=(0.1, -0.2, 0.05), translation=(0.2, -0.1, 5.0),
    )
    pts = rng.normal(size=(200, 3))
    ours = geometry.project(cam, pts)
    theirs = synthscene.project_truth(cam, pts)
    assert np.abs(ours - theirs).max() < 1e-9


def test_per_frame_weak_camera_sequence():
    cam = WeakPerspective(np.array([1.0, 2.0]), np.array([0.0, 1.0]), 0.0)
    pts = np.ones((2, 3, 3))
    out = geometry.project_sequence(cam, pts)
    assert np.allclose(out[0, 0], [1.0, 1.0])
    assert np.allclose(out[1, 0], [4.0, 2.0])


@settings(max_examples=50)
@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
def test_weak_scale_consistency_property(s, x, y):
    base = geometry.project(WeakPerspective(s, 0.0, 0.0), [x, y, 0.0])
    double = geometry.project(WeakPerspective(2.0 * s, 0.0, 0.0), [x, y, 0.0])
    assert np.allclose(double, 2.0 * base, rtol=1e-12, atol=1e-12)


def test_remap_identity():
    data = np.arange(2 * 17 * 3, dtype=np.float64).reshape(2, 17, 3)
    kp = Keypoints2D(data=np.clip(data, 0, 1), skeleton=SkeletonId.COCO17)
    out = geometry.remap_skeleton(kp, SkeletonId.COCO17, SkeletonId.COCO17)
    assert np.array_equal(out.data, kp.data)


def test_remap_wholebody_to_coco_is_first_17():
    data = np.random.default_rng(29).uniform(0, 1, size=(3, 133, 3))
    kp = Keypoints2D(data=data, skeleton=SkeletonId.WHOLEBODY133)
    out = geometry.remap_skeleton(kp, SkeletonId.WHOLEBODY133, SkeletonId.COCO17)
    assert np.array_equal(out.data, data[:, :17, :])


def test_remap_coco_to_wholebody_fills_nan():
    data = np.random.default_rng(31).uniform(0, 1, size=(2, 17, 3))
    kp = Keypoints2D(data=data, skeleton=SkeletonId.COCO17)
    out = geometry.remap_skeleton(kp, SkeletonId.COCO17, SkeletonId.WHOLEBODY133)
    assert np.array_equal(out.data[:, :17, :], data)
    assert np.isnan(out.data[:, 17:, :]).all()
    assert int(np.isnan(out.data).sum()) == 2 * 116 * 3


def test_remap_reverse_restores_mapped_joints():
    rng = np.random.default_rng(37)
    data = rng.uniform(0, 1, size=(2, 133, 3))
    kp = Joints3D(data=data, skeleton=SkeletonId.WHOLEBODY133)
    down = geometry.remap_skeleton(kp, SkeletonId.WHOLEBODY133, SkeletonId.COCO17)
    back = geometry.remap_skeleton(down, SkeletonId.COCO17, SkeletonId.WHOLEBODY133)
    assert np.array_equal(back.data[:, :17, :], data[:, :17, :])
    assert np.isnan(back.data[:, 17:, :]).all()


def test_remap_without_mapping_fails():
    kp = Keypoints2D(
        data=np.zeros((1, 13, 3)), skeleton=SkeletonId.SYNTHETIC13
    )
    with pytest.raises(NoMapping):
        geometry.remap_skeleton(kp, SkeletonId.SYNTHETIC13, SkeletonId.COCO17)
