import numpy as np
import pytest

from conftest import import_frames
from posepipe import synthscene, viz
from posepipe.datamodel import TrackletSet
from posepipe.engine import TableDef, TableKind
from posepipe.errors import CycleDetected, DuplicateKey
from posepipe.metastore import BlobRef

#: the computational tree: method lookups feed method selections, analysis
#: tables chain tracking -> curation -> topdown -> lifting / body model,
#: and render tables hang off the blurred video plus their analysis table
EXPECTED_EDGES = sorted(
    [
        ("video", "tracking_bbox_method"),
        ("tracking_bbox_method_lookup", "tracking_bbox_method"),
        ("tracking_bbox_method", "tracking_bbox"),
        ("tracking_bbox", "person_bbox_valid"),
        ("person_bbox_valid", "person_bbox"),
        ("video", "face_keypoints"),
        ("face_keypoints", "blurred_video"),
        ("person_bbox", "top_down_method"),
        ("top_down_method_lookup", "top_down_method"),
        ("top_down_method", "top_down_person"),
        ("top_down_person", "lifting_method"),
        ("lifting_method_lookup", "lifting_method"),
        ("lifting_method", "lifting_person"),
        ("person_bbox", "body_model_method"),
        ("body_model_method_lookup", "body_model_method"),
        ("body_model_method", "body_model_person"),
        ("blurred_video", "tracking_bbox_video"),
        ("tracking_bbox", "tracking_bbox_video"),
        ("blurred_video", "top_down_person_video"),
        ("top_down_person", "top_down_person_video"),
        ("blurred_video", "lifting_person_video"),
        ("lifting_person", "lifting_person_video"),
        ("blurred_video", "body_model_person_video"),
        ("body_model_person", "body_model_person_video"),
    ]
)

ANALYSIS_TABLES = {
    "tracking_bbox",
    "person_bbox",
    "top_down_person",
    "lifting_person",
    "body_model_person",
}

RENDER_TABLES = {
    "blurred_video",
    "tracking_bbox_video",
    "top_down_person_video",
    "lifting_person_video",
    "body_model_person_video",
}


def test_registered_dag_matches_golden_edge_list(pipe):
    assert sorted(pipe.engine.edges()) == EXPECTED_EDGES


def test_analysis_never_depends_on_renders(pipe):
    for parent, child in pipe.engine.edges():
        if child in ANALYSIS_TABLES:
            assert parent not in RENDER_TABLES


def test_cyclic_registration_rejected(pipe):
    with pytest.raises(CycleDetected):
        pipe.engine.register_table(
            TableDef("loop", TableKind.MANUAL, parents=("loop",),
                     extra_key_fields=("x",))
        )


def test_lookups_seeded_with_reference_methods(pipe):
    rows = pipe.engine.rows("tracking_bbox_method_lookup")
    assert {r["tracking_method_name"] for r in rows} == {"ref-color"}
    rows = pipe.engine.rows("top_down_method_lookup")
    assert {r["top_down_method_name"] for r in rows} == {"ref-disk"}
    # seeding again is a no-op
    pipe._seed_lookups()
    assert len(pipe.engine.rows("tracking_bbox_method_lookup")) == 1


@pytest.fixture()
def populated(pipe, occluded_scene):
    """One occluded single-actor video taken through tracking."""
    _, frames, truth = occluded_scene
    import_frames(pipe, "demo", "clip", frames)
    pipe.select_method("tracking_bbox", "ref-color")
    assert pipe.engine.populate("tracking_bbox").succeeded == 1
    return pipe, frames, truth


def test_occlusion_splits_tracklets_then_stitching(populated):
    pipe, frames, truth = populated
    row = pipe.engine.rows("tracking_bbox")[0]
    ts = TrackletSet.from_payload(row)
    assert row["num_tracks"] == 2  # the gap split the subject
    report = pipe.annotate("demo", "clip", tracking_method=0, subject_id=0,
                           track_ids=sorted(ts.track_ids()))
    assert report.ok
    assert pipe.engine.populate("person_bbox").succeeded == 1
    person = pipe.engine.rows("person_bbox")[0]
    present = ~np.isnan(person["bboxes"]).any(axis=1)
    assert not present[40:60].any()
    assert present[:40].all() and present[60:].all()


def test_overlapping_selection_rejected(populated):
    pipe, _, _ = populated
    # craft a second video whose two actors overlap in time
    spec = synthscene.make_demo_scene(seed=77, num_actors=2, frame_count=40)
    frames2, _ = synthscene.generate(spec)
    import_frames(pipe, "demo", "clip2", frames2)
    pipe.select_method("tracking_bbox", "ref-color")
    pipe.engine.populate("tracking_bbox")
    report = pipe.annotate("demo", "clip2", tracking_method=0, subject_id=0,
                           track_ids=[0, 1])
    assert not report.ok
    assert len(report.conflicting_frames) == 40


def test_invalid_subject_produces_zero_downstream_keys(populated):
    pipe, _, _ = populated
    report = pipe.annotate("demo", "clip", tracking_method=0, subject_id=-1,
                           track_ids=[])
    assert report.ok
    assert pipe.engine.keys("person_bbox_valid") == [
        {"project": "demo", "filename": "clip", "tracking_method": 0,
         "subject_id": -1}
    ]
    assert pipe.engine.keys_to_populate("person_bbox") == []
    summary = pipe.engine.populate("person_bbox")
    assert summary.succeeded == 0
    # and therefore nothing downstream ever sees the key
    assert pipe.engine.keys_to_populate("top_down_person") == []


def test_duplicate_annotation_rejected(populated):
    pipe, _, _ = populated
    pipe.annotate("demo", "clip", tracking_method=0, subject_id=-1, track_ids=[])
    with pytest.raises(DuplicateKey):
        pipe.annotate("demo", "clip", tracking_method=0, subject_id=-1, track_ids=[])


def test_nan_semantics_flow_through_lifting(populated):
    """Frames without a bbox are all-NaN keypoint rows, and lifting keeps
    the same missing mask."""
    pipe, frames, truth = populated
    row = pipe.engine.rows("tracking_bbox")[0]
    ts = TrackletSet.from_payload(row)
    pipe.annotate("demo", "clip", tracking_method=0, subject_id=0,
                  track_ids=sorted(ts.track_ids()))
    pipe.engine.populate("person_bbox")
    pipe.select_method("top_down_person", "ref-disk")
    assert pipe.engine.populate("top_down_person").succeeded == 1
    pipe.select_method("lifting_person", "ref-backproject")
    assert pipe.engine.populate("lifting_person").succeeded == 1

    person = pipe.engine.rows("person_bbox")[0]
    missing = np.isnan(person["bboxes"]).all(axis=1)
    kp = pipe.engine.rows("top_down_person")[0]["keypoints"]
    joints = pipe.engine.rows("lifting_person")[0]["joints3d"]
    kp_missing = np.isnan(kp).all(axis=(1, 2))
    j_missing = np.isnan(joints).all(axis=(1, 2))
    assert np.array_equal(kp_missing, missing)
    assert np.array_equal(j_missing, missing)
    assert int(missing.sum()) == 20


def test_scratch_never_outlives_hooks(populated):
    pipe, _, _ = populated
    pipe.annotate("demo", "clip", tracking_method=0, subject_id=0, track_ids=[0, 1])
    pipe.engine.populate("person_bbox")
    pipe.engine.populate("face_keypoints")
    pipe.engine.populate("blurred_video")
    leftovers = list(pipe.scratch_root.iterdir())
    assert leftovers == []


def test_annotate_auto_applies_to_single_track_videos(pipe):
    spec = synthscene.make_demo_scene(seed=51, num_actors=1, frame_count=30)
    frames, _ = synthscene.generate(spec)
    import_frames(pipe, "demo", "solo", frames)
    spec2 = synthscene.make_demo_scene(seed=52, num_actors=2, frame_count=30)
    frames2, _ = synthscene.generate(spec2)
    import_frames(pipe, "demo", "duo", frames2)
    pipe.select_method("tracking_bbox", "ref-color")
    pipe.engine.populate("tracking_bbox")
    assert pipe.annotate_auto("demo") == 1  # only the single-track video
    (valid,) = pipe.engine.rows("person_bbox_valid")
    assert valid["filename"] == "solo"
    assert valid["subject_id"] == 0
    assert valid["annotator"] == "auto"
    # a second pass changes nothing
    assert pipe.annotate_auto("demo") == 0


def test_select_method_unknown_method(pipe):
    from posepipe.errors import UnsupportedMethod

    with pytest.raises(UnsupportedMethod):
        pipe.select_method("tracking_bbox", "made-up-tracker")


def test_render_tables_store_blurred_overlays(populated):
    pipe, frames, truth = populated
    pipe.annotate("demo", "clip", tracking_method=0, subject_id=0, track_ids=[0, 1])
    for table in ("person_bbox", "face_keypoints", "blurred_video",
                  "tracking_bbox_video"):
        assert pipe.engine.populate(table).failed == 0
    row = pipe.engine.rows("tracking_bbox_video")[0]
    payload = pipe.store.blobs.read_blob(
        BlobRef(digest=row["blob_digest"], size_bytes=int(row["blob_size"]))
    )
    rendered, meta = synthscene.parse_rawvideo(payload)
    assert rendered.shape == frames.shape
    assert meta.frame_count == frames.shape[0]
    # the overlay rides on the blurred video: the head marker is covered
    head = truth.joints2d[0, 0, 0]
    x, y = int(round(head[0])), int(round(head[1]))
    assert tuple(rendered[0, y, x]) == viz.FACE_FILL
