import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from posepipe import synthscene
from posepipe.adapters import Registry, register_reference_adapters
from posepipe.config import Config, build_pipeline
from posepipe.datamodel import PersonBbox, TrackletSet

DEMO_DEPTH = 4.0


@pytest.fixture()
def pipe(tmp_path):
    cfg = Config(
        db_path=str(tmp_path / "db.sqlite"),
        store_root=str(tmp_path / "store"),
        scratch_root=str(tmp_path / "scratch"),
    )
    return build_pipeline(cfg)


@pytest.fixture()
def registry():
    reg = Registry()
    register_reference_adapters(reg, synthscene.demo_camera(), DEMO_DEPTH)
    return reg


@pytest.fixture(scope="session")
def scene300():
    """2 actors, 300 frames: the workhorse scene for adapter fidelity."""
    spec = synthscene.make_demo_scene(seed=11, num_actors=2, frame_count=300)
    frames, truth = synthscene.generate(spec)
    return spec, frames, truth


@pytest.fixture(scope="session")
def occluded_scene():
    """Single actor hidden on frames 40..59, so its tracklet splits."""
    spec = synthscene.make_demo_scene(
        seed=5,
        num_actors=1,
        frame_count=120,
        occlusion=synthscene.OcclusionEvent(actor=0, start=40, stop=60),
    )
    frames, truth = synthscene.generate(spec)
    return spec, frames, truth


def import_frames(pipe, project, name, frames, fps=30.0):
    path = Path(pipe.scratch_root).parent / f"import-{project}-{name}"
    synthscene.write_rawvideo(frames, path, fps=fps)
    pipe.import_video(project, name, path)
    path.unlink()


def actor_track_ids(ts: TrackletSet, truth, actor: int) -> list[int]:
    """Which track ids belong to a ground-truth actor, by bbox proximity."""
    ids = []
    for tid in sorted(ts.track_ids()):
        frames = ts.frames_of(tid)
        f = frames[0]
        det = next(d for d in ts.per_frame[f] if d.track_id == tid)
        centers = truth.bboxes[:, f, 0] + truth.bboxes[:, f, 2] / 2.0
        det_center = det.bbox[0] + det.bbox[2] / 2.0
        nearest = int(np.nanargmin(np.abs(centers - det_center)))
        if nearest == actor:
            ids.append(tid)
    return ids


def person_from_tracks(ts: TrackletSet, track_ids, frame_count) -> PersonBbox:
    bboxes = np.full((frame_count, 4), np.nan)
    chosen = set(track_ids)
    for f, dets in enumerate(ts.per_frame):
        for det in dets:
            if det.track_id in chosen:
                bboxes[f] = det.bbox
    return PersonBbox(bboxes=bboxes)
