from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posepipe import synthscene, viz
from posepipe.datamodel import Detection, Keypoints2D, SkeletonId, TrackletSet, skeleton
from posepipe.errors import EncoderFailed
from posepipe.metastore import BlobStore


def black(n=3, h=40, w=60):
    return np.zeros((n, h, w, 3), dtype=np.uint8)


# -- face covering ------------------------------------------------------------------


def test_circle_covers_all_keypoints():
    face = np.array([[20.0, 20.0], [24.0, 18.0], [18.0, 23.0], [21.0, 25.0], [22.0, 19.0]])
    center, radius = viz.face_circle(face)
    dists = np.linalg.norm(face - center, axis=1)
    assert (dists < radius).all()  # strictly inside
    frames = viz.blur_faces(black(1), [[face]])
    ys, xs = np.nonzero((frames[0] != 0).any(axis=2))
    assert len(xs) > 0
    # painted pixels stay within the circle bound
    assert (np.hypot(xs + 0.5 - center[0], ys + 0.5 - center[1]) <= radius).all()


def test_single_point_face_gets_minimum_radius():
    center, radius = viz.face_circle(np.array([[5.0, 5.0]]))
    assert radius == viz.MIN_FACE_RADIUS


def test_frame_without_faces_unchanged():
    frames = black(2)
    frames[1, 3, 4] = (9, 9, 9)
    out = viz.blur_faces(frames, [[], []])
    assert np.array_equal(out, frames)


def test_nan_only_face_ignored():
    out = viz.blur_faces(black(1), [[np.full((4, 2), np.nan)]])
    assert (out == 0).all()


def test_two_faces_two_disjoint_circles(scene300):
    _, frames, truth = scene300
    heads = truth.joints2d[:, 0, 0, :]  # both actors, frame 0
    faces = [
        [head[None, :] + np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])
         for head in heads]
    ]
    circles = [viz.face_circle(face) for face in faces[0]]
    (c1, r1), (c2, r2) = circles
    assert np.linalg.norm(c1 - c2) > r1 + r2  # disjoint
    out = viz.blur_faces(frames[:1], faces)
    for center, radius in circles:
        region = out[0][
            int(center[1] - 2) : int(center[1] + 3),
            int(center[0] - 2) : int(center[0] + 3),
        ]
        assert (region == viz.FACE_FILL).all()


@settings(max_examples=100)
@given(
    pts=st.lists(
        st.tuples(st.floats(-50, 150), st.floats(-50, 150)), min_size=1, max_size=12
    )
)
def test_blur_coverage_property(pts):
    """Every finite facial keypoint lies strictly inside its circle."""
    face = np.array(pts, dtype=np.float64)
    center, radius = viz.face_circle(face)
    assert (np.linalg.norm(face - center, axis=1) < radius).all()


# -- overlays ---------------------------------------------------------------------


def test_identity_callback_keeps_frames():
    frames = np.random.default_rng(0).integers(0, 255, size=(4, 8, 8, 3), dtype=np.uint8)
    out = viz.render_overlay(frames, lambda frame, idx: frame)
    assert np.array_equal(out, frames)
    assert out is not frames


def test_callback_called_once_per_frame_in_order():
    calls = []
    viz.render_overlay(black(5), lambda frame, idx: calls.append(idx) or frame)
    assert calls == [0, 1, 2, 3, 4]


def test_index_stamp_changes_only_stamp_region():
    frames = black(3)

    def stamp(frame, idx):
        frame[0, idx] = (255, 255, 255)
        return frame

    out = viz.render_overlay(frames, stamp)
    for f in range(3):
        diff = np.nonzero((out[f] != frames[f]).any(axis=2))
        assert diff[0].tolist() == [0] and diff[1].tolist() == [f]


def test_overlay_must_keep_dimensions():
    with pytest.raises(ValueError):
        viz.render_overlay(black(1), lambda frame, idx: frame[:-1])


def test_render_is_pure_parallel_equals_serial():
    rng = np.random.default_rng(5)
    frames = rng.integers(0, 255, size=(12, 16, 16, 3), dtype=np.uint8)

    def draw(frame, idx):
        viz.fill_circle(frame, (8.0, 8.0), 3.0 + idx % 3, (10, 200, 30))
        return frame

    serial = viz.render_overlay(frames, draw)
    with ThreadPoolExecutor(4) as pool:
        parallel = np.stack(
            list(pool.map(lambda i: draw(frames[i].copy(), i), range(12)))
        )
    assert np.array_equal(serial, parallel)


def test_bbox_callback_matches_truth_within_one_pixel(scene300):
    _, frames, truth = scene300
    bbox = truth.bboxes[0, 0]

    def draw(frame, idx):
        viz.draw_rect(frame, bbox, (255, 255, 255))
        return frame

    out = viz.render_overlay(frames[:1], draw)
    changed = np.nonzero((out[0] != frames[0]).any(axis=2))
    xs, ys = changed[1], changed[0]
    # pixel index i covers [i, i + 1): compare near edges to indices and
    # far edges to indices + 1
    assert abs(xs.min() - bbox[0]) <= 1.0
    assert abs(ys.min() - bbox[1]) <= 1.0
    assert abs(xs.max() + 1 - (bbox[0] + bbox[2])) <= 1.0
    assert abs(ys.max() + 1 - (bbox[1] + bbox[3])) <= 1.0


def test_draw_tracklets_stable_colors():
    ts = TrackletSet.from_frames(
        [
            [Detection(0, 0, (2.0, 10.0, 8.0, 8.0), 1.0),
             Detection(0, 3, (30.0, 10.0, 8.0, 8.0), 1.0)],
        ]
    )
    out = viz.draw_tracklets(black(1), ts)
    assert (out[0] != 0).any()
    c0 = viz.track_color(0)
    c3 = viz.track_color(3)
    assert (out[0] == c0).all(axis=2).any()
    assert (out[0] == c3).all(axis=2).any()
    assert c0 != c3


def test_draw_keypoints_left_red_right_blue():
    skel = skeleton(SkeletonId.SYNTHETIC13)
    data = np.full((1, 13, 3), np.nan)
    data[0, skel.index_of("l_wrist")] = (10.0, 10.0, 1.0)
    data[0, skel.index_of("r_wrist")] = (40.0, 10.0, 1.0)
    kp = Keypoints2D(data=data, skeleton=SkeletonId.SYNTHETIC13)
    out = viz.draw_keypoints(black(1), kp, skel)
    assert (out[0] == viz.LEFT_COLOR).all(axis=2).any()
    assert (out[0] == viz.RIGHT_COLOR).all(axis=2).any()
    # NaN joints draw nothing else
    painted = np.nonzero((out[0] != 0).any(axis=2))
    assert (painted[1] < 20).sum() > 0 and (painted[1] > 30).sum() > 0


def test_skeleton_strip_draws_sides():
    skel = skeleton(SkeletonId.SYNTHETIC13)
    joints = np.zeros((2, 13, 3))
    joints[:, :, 0] = np.linspace(-1, 1, 13)[None, :]
    joints[:, :, 1] = np.linspace(-1, 1, 13)[None, :]
    panels = viz.draw_skeleton3d_strip(joints, skel, size=64)
    assert panels.shape == (2, 64, 64, 3)
    assert (panels[0] == viz.LEFT_COLOR).all(axis=2).any()
    assert (panels[0] == viz.RIGHT_COLOR).all(axis=2).any()


# -- encoder sink --------------------------------------------------------------------


def test_encode_pprv_sink_roundtrip(tmp_path):
    blobs = BlobStore(tmp_path / "store")
    frames = np.random.default_rng(1).integers(0, 255, size=(30, 8, 8, 3), dtype=np.uint8)
    ref = viz.encode(frames, blobs, fps=30.0)
    again, meta = synthscene.parse_rawvideo(blobs.read_blob(ref))
    assert np.array_equal(again, frames)
    assert meta.frame_count == 30  # container frame count matches input


def test_encode_external_command(tmp_path):
    blobs = BlobStore(tmp_path / "store")
    frames = np.ones((2, 4, 4, 3), dtype=np.uint8)
    # stand-in encoder: copy stdin to the output path
    ref = viz.encode(frames, blobs, fps=10.0,
                     encoder_cmd=("sh", "-c", "cat > {out}"))
    assert blobs.read_blob(ref) == frames.tobytes()


def test_encode_failing_encoder(tmp_path):
    blobs = BlobStore(tmp_path / "store")
    frames = np.ones((2, 4, 4, 3), dtype=np.uint8)
    with pytest.raises(EncoderFailed):
        viz.encode(frames, blobs, fps=10.0, encoder_cmd=("false",))
    with pytest.raises(EncoderFailed):
        viz.encode(frames, blobs, fps=10.0, encoder_cmd=("true",))
