import numpy as np
import pytest

import oracles
from posepipe import geometry, synthscene
from posepipe.errors import CorruptFile, SpecInvalid
from posepipe.synthscene import (
    ActorSpec,
    OcclusionEvent,
    SceneSpec,
    demo_camera,
    generate,
    make_demo_scene,
    parse_rawvideo,
    probe_rawvideo,
    rawvideo_bytes,
    read_rawvideo,
    write_rawvideo,
)


def test_generation_is_deterministic():
    spec = make_demo_scene(seed=1, num_actors=1, frame_count=30)
    frames1, truth1 = generate(spec)
    frames2, truth2 = generate(spec)
    assert np.array_equal(frames1, frames2)
    assert np.array_equal(truth1.joints2d, truth2.joints2d)


def test_different_seed_changes_phase():
    f1, t1 = generate(make_demo_scene(seed=1, num_actors=1, frame_count=30))
    f2, t2 = generate(make_demo_scene(seed=2, num_actors=1, frame_count=30))
    assert not np.array_equal(t1.joints2d, t2.joints2d)


def test_gait_frequency_dominates_dft():
    # 240 frames at 30 fps puts 1.25 Hz exactly on DFT bin 10
    spec = make_demo_scene(seed=4, num_actors=1, frame_count=240,
                           gait_frequency=1.25)
    _, truth = generate(spec)
    wrist = truth.joints2d[0, :, 5, 0]  # l_wrist x
    mags = oracles.dft_magnitudes(wrist - wrist.mean())
    assert int(np.argmax(mags[1:])) + 1 == 10
    assert oracles.dominant_frequency(wrist, fps=30.0) == pytest.approx(1.25)


def test_occlusion_schedule_respected():
    event = OcclusionEvent(actor=0, start=10, stop=15)
    spec = make_demo_scene(seed=1, num_actors=1, frame_count=30, occlusion=event)
    frames, truth = generate(spec)
    assert not truth.visible[0, 10:15].any()
    assert truth.visible[0, :10].all() and truth.visible[0, 15:].all()
    assert np.isnan(truth.bboxes[0, 10:15]).all()
    assert (frames[10:15] == 0).all()  # nothing drawn while hidden


def test_truth_projection_matches_geometry_module():
    spec = make_demo_scene(seed=8, num_actors=2, frame_count=40)
    _, truth = generate(spec)
    pts = truth.joints3d.reshape(-1, 3)
    ours = geometry.project(truth.camera, pts)
    assert np.abs(ours - truth.joints2d.reshape(-1, 2)).max() < 1e-9


def test_bbox_tightly_contains_drawn_pixels():
    spec = make_demo_scene(seed=9, num_actors=2, frame_count=40)
    frames, truth = generate(spec)
    for a, color in enumerate(truth.identity_colors):
        red = color[0]
        for f in range(frames.shape[0]):
            rows, cols = np.nonzero(frames[f, :, :, 0] == red)
            assert rows.size > 0
            x0, y0, w, h = truth.bboxes[a, f]
            assert cols.min() + 0.5 >= x0 - 0.5 and cols.max() + 0.5 <= x0 + w + 0.5
            assert rows.min() + 0.5 >= y0 - 0.5 and rows.max() + 0.5 <= y0 + h + 0.5


def test_bbox_contains_all_joint_disks():
    spec = make_demo_scene(seed=10, num_actors=1, frame_count=60)
    _, truth = generate(spec)
    r = synthscene.DISK_RADIUS
    for f in range(60):
        x0, y0, w, h = truth.bboxes[0, f]
        pts = truth.joints2d[0, f]
        assert (pts[:, 0] - r >= x0 - 1e-9).all()
        assert (pts[:, 0] + r <= x0 + w + 1e-9).all()
        assert (pts[:, 1] - r >= y0 - 1e-9).all()
        assert (pts[:, 1] + r <= y0 + h + 1e-9).all()


def test_spec_validation():
    cam = demo_camera()
    actor = ActorSpec(identity_color=(64, 0, 0), base=(0.0, 0.0),
                      gait_amplitude=0.1, gait_frequency=1.0, depth=4.0)
    ok = SceneSpec(seed=1, width=32, height=32, fps=30.0, frame_count=5,
                   actors=(actor,), camera=cam)
    generate(ok)
    with pytest.raises(SpecInvalid):
        generate(SceneSpec(seed=1, width=0, height=32, fps=30.0, frame_count=5,
                           actors=(actor,), camera=cam))
    fast = ActorSpec(identity_color=(96, 0, 0), base=(0.0, 0.0),
                     gait_amplitude=0.1, gait_frequency=16.0, depth=4.0)
    with pytest.raises(SpecInvalid):
        generate(SceneSpec(seed=1, width=32, height=32, fps=30.0, frame_count=5,
                           actors=(fast,), camera=cam))
    twin = ActorSpec(identity_color=(64, 0, 0), base=(1.0, 0.0),
                     gait_amplitude=0.1, gait_frequency=1.0, depth=4.0)
    with pytest.raises(SpecInvalid):
        generate(SceneSpec(seed=1, width=32, height=32, fps=30.0, frame_count=5,
                           actors=(actor, twin), camera=cam))
    with pytest.raises(SpecInvalid):
        generate(SceneSpec(seed=1, width=32, height=32, fps=30.0, frame_count=5,
                           actors=(actor,), camera=cam,
                           occlusion_events=(OcclusionEvent(3, 0, 2),)))


def test_empty_scene_renders_black():
    spec = SceneSpec(seed=1, width=16, height=16, fps=30.0, frame_count=4,
                     actors=(), camera=demo_camera(16, 16))
    frames, truth = generate(spec)
    assert (frames == 0).all()
    assert truth.joints2d.shape == (0, 4, 13, 2)


def test_rawvideo_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    frames = rng.integers(0, 255, size=(7, 10, 12, 3), dtype=np.uint8)
    path = tmp_path / "clip.pprv"
    write_rawvideo(frames, path, fps=12.5)
    again, meta = read_rawvideo(path)
    assert np.array_equal(frames, again)
    assert (meta.width, meta.height, meta.frame_count, meta.fps) == (12, 10, 7, 12.5)
    probe = probe_rawvideo(path)
    assert probe == meta


def test_rawvideo_corruption_detected(tmp_path):
    frames = np.zeros((2, 4, 4, 3), dtype=np.uint8)
    data = rawvideo_bytes(frames, 30.0)
    with pytest.raises(CorruptFile):
        parse_rawvideo(data[:-1])
    with pytest.raises(CorruptFile):
        parse_rawvideo(b"XXXX" + data[4:])
    path = tmp_path / "bad.pprv"
    path.write_bytes(data[:10])
    with pytest.raises(CorruptFile):
        probe_rawvideo(path)
    path.write_bytes(data[:-5])
    with pytest.raises(CorruptFile):
        read_rawvideo(path)


def test_marker_blocks_never_collide_across_demo_scenes():
    """The sub-pixel encoding relies on disjoint 2x2 marker blocks."""
    for seed in range(4):
        for actors in (1, 2, 3):
            spec = make_demo_scene(seed=seed, num_actors=actors, frame_count=50)
            _, truth = generate(spec)
            for f in range(50):
                blocks = set()
                for a in range(actors):
                    for j in range(13):
                        x, y = truth.joints2d[a, f, j]
                        i = int(np.floor(x - 0.5))
                        k = int(np.floor(y - 0.5))
                        for dx in (0, 1):
                            for dy in (0, 1):
                                cell = (i + dx, k + dy)
                                assert cell not in blocks
                                blocks.add(cell)
