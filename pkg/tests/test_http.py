import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from conftest import import_frames
from posepipe import synthscene
from posepipe.datamodel import TrackletSet
from posepipe.http_service import PipelineService


@pytest.fixture()
def service(pipe, occluded_scene):
    _, frames, _ = occluded_scene
    import_frames(pipe, "demo", "split", frames)
    duo_spec = synthscene.make_demo_scene(seed=61, num_actors=2, frame_count=40)
    duo_frames, _ = synthscene.generate(duo_spec)
    import_frames(pipe, "demo", "duo", duo_frames)
    pipe.select_method("tracking_bbox", "ref-color")
    pipe.engine.populate("tracking_bbox")
    svc = PipelineService(pipe)
    server = svc.make_server("127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield svc, base
    server.shutdown()
    server.server_close()


def get(base, path):
    try:
        with urllib.request.urlopen(base + path) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def get_raw(base, path):
    with urllib.request.urlopen(base + path) as response:
        return response.status, response.read()


def post(base, path, body):
    request = urllib.request.Request(
        base + path,
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_video_listing_and_status(service):
    _, base = service
    status, body = get(base, "/api/videos?project=demo")
    assert status == 200
    videos = {v["filename"]: v for v in body["videos"]}
    assert set(videos) == {"split", "duo"}
    assert videos["split"]["status"] == "pending"
    assert videos["split"]["frame_count"] == 120
    assert videos["split"]["tracking"][0]["num_tracks"] == 2
    assert videos["split"]["version"] == 0


def test_tracklets_summary(service):
    _, base = service
    status, body = get(base, "/api/videos/demo/split/tracklets")
    assert status == 200
    (method,) = body["tracking_methods"]
    assert method["num_tracks"] == 2
    first, second = method["tracks"]
    assert first["first_frame"] == 0 and first["last_frame"] == 39
    assert second["first_frame"] == 60 and second["last_frame"] == 119
    assert first["mean_confidence"] == 1.0


def test_unknown_video_404(service):
    _, base = service
    status, body = get(base, "/api/videos/demo/nope/tracklets")
    assert status == 404
    assert body["error"] == "unknown_video"


def test_annotation_disjoint_selection_ok(service):
    svc, base = service
    status, body = post(
        base,
        "/api/videos/demo/split/annotation",
        {"subject_id": 0, "track_ids": [0, 1], "version": 0},
    )
    assert status == 200
    assert body == {"ok": True, "version": 1}
    assert svc.engine.keys_to_populate("person_bbox") != []
    # listing reflects the decision
    _, listing = get(base, "/api/videos?project=demo")
    split = next(v for v in listing["videos"] if v["filename"] == "split")
    assert split["status"] == "annotated"
    assert split["version"] == 1


def test_annotation_overlap_409_with_frames(service):
    _, base = service
    status, body = post(
        base,
        "/api/videos/demo/duo/annotation",
        {"subject_id": 0, "track_ids": [0, 1]},
    )
    assert status == 409
    assert body["error"] == "overlap"
    assert body["frames"] == list(range(40))


def test_annotation_stale_version_409(service):
    _, base = service
    status, _ = post(
        base,
        "/api/videos/demo/split/annotation",
        {"subject_id": 0, "track_ids": [0], "version": 0},
    )
    assert status == 200
    status, body = post(
        base,
        "/api/videos/demo/split/annotation",
        {"subject_id": 1, "track_ids": [1], "version": 0},
    )
    assert status == 409
    assert body["error"] == "stale_version"
    assert body["version"] == 1


def test_annotation_invalid_marks_video(service):
    _, base = service
    status, body = post(
        base,
        "/api/videos/demo/split/annotation",
        {"subject_id": -1, "track_ids": []},
    )
    assert status == 200
    _, listing = get(base, "/api/videos?project=demo")
    split = next(v for v in listing["videos"] if v["filename"] == "split")
    assert split["status"] == "invalid"


def test_annotation_malformed_bodies_422(service):
    _, base = service
    for body in (
        {"track_ids": [0]},
        {"subject_id": "x", "track_ids": [0]},
        {"subject_id": -1, "track_ids": [0]},
        {"subject_id": 0, "track_ids": []},
    ):
        status, reply = post(base, "/api/videos/demo/split/annotation", body)
        assert status == 422, reply
    request = urllib.request.Request(
        base + "/api/videos/demo/split/annotation",
        data=b"{not json",
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(request)
    assert err.value.code == 422


def test_overlay_stream_is_blurred_tracklet_video(service, occluded_scene):
    svc, base = service
    _, frames, truth = occluded_scene
    status, payload = get_raw(base, "/api/videos/demo/split/overlay")
    assert status == 200
    rendered, meta = synthscene.parse_rawvideo(payload)
    assert rendered.shape == frames.shape
    # face is covered on the rendered stream
    from posepipe import viz

    head = truth.joints2d[0, 0, 0]
    assert tuple(rendered[0, int(round(head[1])), int(round(head[0]))]) == viz.FACE_FILL
    # served lazily and cached: a second request returns identical bytes
    status, payload2 = get_raw(base, "/api/videos/demo/split/overlay")
    assert payload2 == payload


def test_populate_endpoint_enqueues(service):
    svc, base = service
    post(base, "/api/videos/demo/split/annotation",
         {"subject_id": 0, "track_ids": [0, 1]})
    status, body = post(base, "/api/populate", {"table": "person_bbox"})
    assert status == 200
    assert body["enqueued"] == 1
    svc.wait_idle()
    assert len(svc.engine.rows("person_bbox")) == 1
    status, body = post(base, "/api/populate", {"table": "nope"})
    assert status == 422
    status, body = post(base, "/api/populate",
                        {"table": "tracking_bbox", "method": "made-up"})
    assert status == 422
    assert body["error"] == "unsupported_method"


def test_jobs_endpoint(service):
    svc, base = service
    status, body = get(base, "/api/jobs?table=tracking_bbox")
    assert status == 200
    assert len(body["jobs"]) == 2
    assert all(j["status"] == "done" for j in body["jobs"])


def test_endpoint_equals_library_call(service):
    """The HTTP layer is a thin adapter over the library surface."""
    svc, base = service
    _, via_http = get(base, "/api/videos?project=demo")
    assert via_http["videos"] == svc.list_videos("demo")
    _, tracklets_http = get(base, "/api/videos/demo/duo/tracklets")
    assert tracklets_http == svc.tracklet_summary("demo", "duo")
