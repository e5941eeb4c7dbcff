"""The concrete computational tree: video import through tracking,
subject curation, top-down keypoints, lifting, body-model fitting, and
the blurred/overlay render tables, all wired as computed tables whose
make hooks call the stage runners.

Analysis tables never depend on render tables, so visualizations can be
skipped or deleted without touching results.
"""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import adapters, annotation, viz
from .datamodel import (
    INVALID_SUBJECT,
    Keypoints2D,
    PersonBbox,
    SkeletonId,
    Stage,
    SubjectAnnotation,
    TrackletSet,
    VideoKey,
    skeleton,
)
from .engine import Engine, Key, MakeContext, TableDef, TableKind, canonical_key_json
from .errors import DuplicateKey, NotFound
from .metastore import BlobRef, MetaStore, utc_now_iso
from .synthscene import PPRVSource, parse_rawvideo

VIDEO = "video"
TRACKING_LOOKUP = "tracking_bbox_method_lookup"
TRACKING_METHOD = "tracking_bbox_method"
TRACKING_BBOX = "tracking_bbox"
PERSON_BBOX_VALID = "person_bbox_valid"
PERSON_BBOX = "person_bbox"
FACE_KEYPOINTS = "face_keypoints"
BLURRED_VIDEO = "blurred_video"
TOPDOWN_LOOKUP = "top_down_method_lookup"
TOPDOWN_METHOD = "top_down_method"
TOPDOWN_PERSON = "top_down_person"
LIFTING_LOOKUP = "lifting_method_lookup"
LIFTING_METHOD = "lifting_method"
LIFTING_PERSON = "lifting_person"
BODYMODEL_LOOKUP = "body_model_method_lookup"
BODYMODEL_METHOD = "body_model_method"
BODYMODEL_PERSON = "body_model_person"
TRACKING_VIDEO = "tracking_bbox_video"
TOPDOWN_VIDEO = "top_down_person_video"
LIFTING_VIDEO = "lifting_person_video"
BODYMODEL_VIDEO = "body_model_person_video"


class StageFlow:
    """Lookup/method/computed triple implementing the select-an-algorithm
    pattern for one stage."""

    def __init__(self, stage: Stage, lookup: str, method_table: str, computed: str,
                 method_field: str, name_field: str, parent: str):
        self.stage = stage
        self.lookup = lookup
        self.method_table = method_table
        self.computed = computed
        self.method_field = method_field
        self.name_field = name_field
        self.parent = parent


FLOWS: dict[str, StageFlow] = {
    TRACKING_BBOX: StageFlow(
        Stage.TRACKING, TRACKING_LOOKUP, TRACKING_METHOD, TRACKING_BBOX,
        "tracking_method", "tracking_method_name", VIDEO,
    ),
    TOPDOWN_PERSON: StageFlow(
        Stage.TOPDOWN, TOPDOWN_LOOKUP, TOPDOWN_METHOD, TOPDOWN_PERSON,
        "top_down_method", "top_down_method_name", PERSON_BBOX,
    ),
    LIFTING_PERSON: StageFlow(
        Stage.LIFTING, LIFTING_LOOKUP, LIFTING_METHOD, LIFTING_PERSON,
        "lifting_method", "lifting_method_name", TOPDOWN_PERSON,
    ),
    BODYMODEL_PERSON: StageFlow(
        Stage.BODYMODEL, BODYMODEL_LOOKUP, BODYMODEL_METHOD, BODYMODEL_PERSON,
        "body_model_method", "body_model_method_name", PERSON_BBOX,
    ),
}

#: populate order that satisfies every dependency
POPULATE_ORDER = (
    TRACKING_BBOX,
    PERSON_BBOX,
    FACE_KEYPOINTS,
    BLURRED_VIDEO,
    TOPDOWN_PERSON,
    LIFTING_PERSON,
    BODYMODEL_PERSON,
    TRACKING_VIDEO,
    TOPDOWN_VIDEO,
    LIFTING_VIDEO,
    BODYMODEL_VIDEO,
)


class Pipeline:
    def __init__(
        self,
        engine: Engine,
        store: MetaStore,
        registry: adapters.Registry,
        scratch_root: str | Path,
        encoder_cmd: Optional[Sequence[str]] = None,
        face_method: str = "ref-face",
    ):
        self.engine = engine
        self.store = store
        self.registry = registry
        self.scratch_root = Path(scratch_root)
        self.scratch_root.mkdir(parents=True, exist_ok=True)
        self.encoder_cmd = tuple(encoder_cmd) if encoder_cmd else None
        self.face_method = face_method
        self.frame_source = PPRVSource()

    # -- schema ---------------------------------------------------------------

    def register_schema(self) -> None:
        e = self.engine
        e.register_table(TableDef(VIDEO, TableKind.MANUAL,
                                  extra_key_fields=("project", "filename")))
        e.register_table(TableDef(TRACKING_LOOKUP, TableKind.LOOKUP,
                                  extra_key_fields=("tracking_method",)))
        e.register_table(TableDef(TRACKING_METHOD, TableKind.MANUAL,
                                  parents=(VIDEO, TRACKING_LOOKUP)))
        e.register_table(TableDef(TRACKING_BBOX, TableKind.COMPUTED,
                                  parents=(TRACKING_METHOD,), make=self._make_tracking))
        e.register_table(TableDef(PERSON_BBOX_VALID, TableKind.MANUAL,
                                  parents=(TRACKING_BBOX,),
                                  extra_key_fields=("subject_id",)))
        e.register_table(TableDef(
            PERSON_BBOX, TableKind.COMPUTED, parents=(PERSON_BBOX_VALID,),
            make=self._make_person_bbox,
            key_filter=lambda key: key["subject_id"] != INVALID_SUBJECT,
        ))
        e.register_table(TableDef(FACE_KEYPOINTS, TableKind.COMPUTED,
                                  parents=(VIDEO,), make=self._make_faces))
        e.register_table(TableDef(BLURRED_VIDEO, TableKind.COMPUTED,
                                  parents=(FACE_KEYPOINTS,), make=self._make_blurred))
        e.register_table(TableDef(TOPDOWN_LOOKUP, TableKind.LOOKUP,
                                  extra_key_fields=("top_down_method",)))
        e.register_table(TableDef(TOPDOWN_METHOD, TableKind.MANUAL,
                                  parents=(PERSON_BBOX, TOPDOWN_LOOKUP)))
        e.register_table(TableDef(TOPDOWN_PERSON, TableKind.COMPUTED,
                                  parents=(TOPDOWN_METHOD,), make=self._make_topdown))
        e.register_table(TableDef(LIFTING_LOOKUP, TableKind.LOOKUP,
                                  extra_key_fields=("lifting_method",)))
        e.register_table(TableDef(LIFTING_METHOD, TableKind.MANUAL,
                                  parents=(TOPDOWN_PERSON, LIFTING_LOOKUP)))
        e.register_table(TableDef(LIFTING_PERSON, TableKind.COMPUTED,
                                  parents=(LIFTING_METHOD,), make=self._make_lifting))
        e.register_table(TableDef(BODYMODEL_LOOKUP, TableKind.LOOKUP,
                                  extra_key_fields=("body_model_method",)))
        e.register_table(TableDef(BODYMODEL_METHOD, TableKind.MANUAL,
                                  parents=(PERSON_BBOX, BODYMODEL_LOOKUP)))
        e.register_table(TableDef(BODYMODEL_PERSON, TableKind.COMPUTED,
                                  parents=(BODYMODEL_METHOD,),
                                  make=self._make_bodymodel))
        e.register_table(TableDef(TRACKING_VIDEO, TableKind.COMPUTED,
                                  parents=(BLURRED_VIDEO, TRACKING_BBOX),
                                  make=self._make_tracking_video))
        e.register_table(TableDef(TOPDOWN_VIDEO, TableKind.COMPUTED,
                                  parents=(BLURRED_VIDEO, TOPDOWN_PERSON),
                                  make=self._make_topdown_video))
        e.register_table(TableDef(LIFTING_VIDEO, TableKind.COMPUTED,
                                  parents=(BLURRED_VIDEO, LIFTING_PERSON),
                                  make=self._make_lifting_video))
        e.register_table(TableDef(BODYMODEL_VIDEO, TableKind.COMPUTED,
                                  parents=(BLURRED_VIDEO, BODYMODEL_PERSON),
                                  make=self._make_bodymodel_video))
        self._seed_lookups()

    def _seed_lookups(self) -> None:
        """Every registered adapter method gets a lookup row."""
        for flow in FLOWS.values():
            existing = {
                row[flow.name_field]: row[flow.method_field]
                for row in self.engine.rows(flow.lookup)
            }
            next_id = max(existing.values(), default=-1) + 1
            for name in self.registry.methods(flow.stage):
                if name not in existing:
                    self.engine.insert(flow.lookup, [{
                        flow.method_field: next_id, flow.name_field: name,
                    }])
                    next_id += 1

    # -- shared hook helpers ----------------------------------------------------

    def _video_frames(self, ctx: MakeContext, key: Key) -> tuple[np.ndarray, float]:
        """Fetch the checksum-validated working copy, decode it, clean up."""
        scratch = Path(tempfile.mkdtemp(dir=self.scratch_root, prefix="work-"))
        try:
            with self.store.working_copy(key["project"], key["filename"], scratch) as path:
                frames = self.frame_source.read(path)
            record = ctx.fetch1(VIDEO, {"project": key["project"],
                                        "filename": key["filename"]})
            return frames, float(record["fps"])
        finally:
            shutil.rmtree(scratch, ignore_errors=True)

    def _blob_frames(self, digest: str, size: int) -> tuple[np.ndarray, float]:
        payload = self.store.blobs.read_blob(BlobRef(digest=digest, size_bytes=size))
        frames, meta = parse_rawvideo(payload)
        return frames, meta.fps

    def _method_name(self, ctx: MakeContext, flow: StageFlow, key: Key) -> str:
        row = ctx.fetch1(flow.lookup, {flow.method_field: key[flow.method_field]})
        return row[flow.name_field]

    def _blurred_frames(self, ctx: MakeContext, key: Key) -> tuple[np.ndarray, float]:
        row = ctx.fetch1(BLURRED_VIDEO, {"project": key["project"],
                                         "filename": key["filename"]})
        return self._blob_frames(row["blob_digest"], int(row["blob_size"]))

    def _person(self, ctx: MakeContext, key: Key) -> PersonBbox:
        restriction = {f: key[f] for f in self.engine.primary_key(PERSON_BBOX)}
        row = ctx.fetch1(PERSON_BBOX, restriction)
        return PersonBbox(bboxes=row["bboxes"])

    def _store_render(self, ctx: MakeContext, key: Key, frames: np.ndarray,
                      fps: float) -> None:
        ref = viz.encode(frames, self.store.blobs, fps, self.encoder_cmd)
        ctx.insert([{**key, "blob_digest": ref.digest, "blob_size": ref.size_bytes}])

    # -- make hooks ---------------------------------------------------------------

    def _make_tracking(self, key: Key, ctx: MakeContext) -> None:
        name = self._method_name(ctx, FLOWS[TRACKING_BBOX], key)
        spec = self.registry.resolve(Stage.TRACKING, name)
        frames, fps = self._video_frames(ctx, key)
        ts = adapters.run_tracking(frames, spec, fps)
        ctx.insert([{**key, **ts.to_payload()}])

    def _make_person_bbox(self, key: Key, ctx: MakeContext) -> None:
        valid = ctx.fetch1(PERSON_BBOX_VALID, key)
        tracks_row = ctx.fetch1(
            TRACKING_BBOX,
            {f: key[f] for f in self.engine.primary_key(TRACKING_BBOX)},
        )
        ts = TrackletSet.from_payload(tracks_row)
        video = ctx.fetch1(VIDEO, {"project": key["project"],
                                   "filename": key["filename"]})
        ann = SubjectAnnotation(
            video=VideoKey(key["project"], key["filename"]),
            subject_id=int(key["subject_id"]),
            selected_track_ids=frozenset(int(t) for t in valid["keep_tracks"]),
            annotator=valid["annotator"],
            created_at=valid["created_at"],
        )
        person = annotation.materialize_person_bbox(ts, ann, int(video["frame_count"]))
        ctx.insert([{**key, "bboxes": person.bboxes}])

    def _make_faces(self, key: Key, ctx: MakeContext) -> None:
        spec = self.registry.resolve(Stage.FACE, self.face_method)
        frames, fps = self._video_frames(ctx, key)
        faces = adapters.run_openface_detect(frames, spec, fps)
        payload = [
            [np.asarray(face, dtype=np.float64).tolist() for face in per_frame]
            for per_frame in faces
        ]
        ctx.insert([{**key, "faces": payload, "face_method": self.face_method}])

    def _make_blurred(self, key: Key, ctx: MakeContext) -> None:
        face_row = ctx.fetch1(FACE_KEYPOINTS, key)
        frames, fps = self._video_frames(ctx, key)
        faces = [
            [np.asarray(face, dtype=np.float64) for face in per_frame]
            for per_frame in face_row["faces"]
        ]
        blurred = viz.blur_faces(frames, faces)
        self._store_render(ctx, key, blurred, fps)

    def _topdown_skeleton(self, spec: adapters.AdapterSpec) -> SkeletonId:
        if "skeleton" in spec.params:
            return SkeletonId(spec.params["skeleton"])
        native = getattr(spec.factory, "supported_skeleton", None)
        return SkeletonId(native) if native else SkeletonId.SYNTHETIC13

    def _make_topdown(self, key: Key, ctx: MakeContext) -> None:
        name = self._method_name(ctx, FLOWS[TOPDOWN_PERSON], key)
        spec = self.registry.resolve(Stage.TOPDOWN, name)
        person = self._person(ctx, key)
        frames, fps = self._video_frames(ctx, key)
        skel = skeleton(self._topdown_skeleton(spec))
        kp = adapters.run_topdown(frames, person, skel, spec, fps)
        ctx.insert([{**key, "keypoints": kp.data, "skeleton": kp.skeleton.value}])

    def _make_lifting(self, key: Key, ctx: MakeContext) -> None:
        name = self._method_name(ctx, FLOWS[LIFTING_PERSON], key)
        spec = self.registry.resolve(Stage.LIFTING, name)
        kp_row = ctx.fetch1(
            TOPDOWN_PERSON,
            {f: key[f] for f in self.engine.primary_key(TOPDOWN_PERSON)},
        )
        kp = Keypoints2D(data=kp_row["keypoints"],
                         skeleton=SkeletonId(kp_row["skeleton"]))
        joints = adapters.run_lifting(kp, spec)
        ctx.insert([{**key, "joints3d": joints.data, "skeleton": joints.skeleton.value}])

    def _make_bodymodel(self, key: Key, ctx: MakeContext) -> None:
        name = self._method_name(ctx, FLOWS[BODYMODEL_PERSON], key)
        spec = self.registry.resolve(Stage.BODYMODEL, name)
        person = self._person(ctx, key)
        frames, fps = self._video_frames(ctx, key)
        result = adapters.run_bodymodel(frames, person, spec, fps)
        ctx.insert([{
            **key,
            "model_type": result.model_type.value,
            "shape": result.shape,
            "pose": result.pose,
            "global_orient": result.global_orient,
            "global_transl": result.global_transl,
            "joints3d": result.joints3d,
            "reproj2d": result.reproj2d,
            "camera": result.camera.to_payload(),
        }])

    def _make_tracking_video(self, key: Key, ctx: MakeContext) -> None:
        frames, fps = self._blurred_frames(ctx, key)
        tracks_row = ctx.fetch1(
            TRACKING_BBOX,
            {f: key[f] for f in self.engine.primary_key(TRACKING_BBOX)},
        )
        ts = TrackletSet.from_payload(tracks_row)
        self._store_render(ctx, key, viz.draw_tracklets(frames, ts), fps)

    def _make_topdown_video(self, key: Key, ctx: MakeContext) -> None:
        frames, fps = self._blurred_frames(ctx, key)
        kp_row = ctx.fetch1(
            TOPDOWN_PERSON,
            {f: key[f] for f in self.engine.primary_key(TOPDOWN_PERSON)},
        )
        kp = Keypoints2D(data=kp_row["keypoints"],
                         skeleton=SkeletonId(kp_row["skeleton"]))
        person = self._person(ctx, key)
        out = viz.draw_keypoints(frames, kp, skeleton(kp.skeleton))
        mask = person.present

        def boxes(frame: np.ndarray, idx: int) -> np.ndarray:
            if mask[idx]:
                viz.draw_rect(frame, person.bboxes[idx], viz.CENTER_COLOR)
            return frame

        self._store_render(ctx, key, viz.render_overlay(out, boxes), fps)

    def _make_lifting_video(self, key: Key, ctx: MakeContext) -> None:
        row = ctx.fetch1(
            LIFTING_PERSON,
            {f: key[f] for f in self.engine.primary_key(LIFTING_PERSON)},
        )
        video = ctx.fetch1(VIDEO, {"project": key["project"],
                                   "filename": key["filename"]})
        panels = viz.draw_skeleton3d_strip(
            row["joints3d"], skeleton(SkeletonId(row["skeleton"]))
        )
        self._store_render(ctx, key, panels, float(video["fps"]))

    def _make_bodymodel_video(self, key: Key, ctx: MakeContext) -> None:
        frames, fps = self._blurred_frames(ctx, key)
        row = ctx.fetch1(
            BODYMODEL_PERSON,
            {f: key[f] for f in self.engine.primary_key(BODYMODEL_PERSON)},
        )
        self._store_render(ctx, key, viz.draw_points(frames, row["reproj2d"]), fps)

    # -- operator helpers -----------------------------------------------------------

    def import_video(self, project: str, filename: str, source) -> None:
        self.store.import_video(project, filename, source, self.frame_source)

    def lookup_method_id(self, computed_table: str, method_name: str) -> int:
        flow = FLOWS[computed_table]
        self.registry.resolve(flow.stage, method_name)  # UnsupportedMethod if absent
        for row in self.engine.rows(flow.lookup):
            if row[flow.name_field] == method_name:
                return int(row[flow.method_field])
        raise NotFound(f"{method_name} missing from {flow.lookup}")

    def select_method(self, computed_table: str, method_name: str,
                      project: Optional[str] = None) -> int:
        """Insert method rows for every parent key that does not have this
        method selected yet; returns the number inserted."""
        flow = FLOWS[computed_table]
        method_id = self.lookup_method_id(computed_table, method_name)
        restriction = {"project": project} if project else None
        have = {
            canonical_key_json({f: k[f] for f in self.engine.primary_key(flow.parent)})
            for k in self.engine.keys(
                flow.method_table, {flow.method_field: method_id}
            )
        }
        rows = []
        for parent_key in self.engine.keys(flow.parent, restriction):
            if canonical_key_json(parent_key) not in have:
                rows.append({**parent_key, flow.method_field: method_id})
        if rows:
            self.engine.insert(flow.method_table, rows)
        return len(rows)

    def annotate(
        self,
        project: str,
        filename: str,
        tracking_method: int,
        subject_id: int,
        track_ids: Sequence[int],
        annotator: str = "manual",
    ) -> annotation.SelectionReport:
        """Validate and store one curation decision; returns the conflict
        report (callers turn non-ok reports into their own error shape)."""
        key = {"project": project, "filename": filename,
               "tracking_method": tracking_method}
        tracks_row = self.engine.rows(TRACKING_BBOX, key)
        if not tracks_row:
            raise NotFound(f"no tracklets computed for {key}")
        ts = TrackletSet.from_payload(tracks_row[0])
        ids = [int(t) for t in track_ids]
        if subject_id != INVALID_SUBJECT:
            report = annotation.validate_selection(ts, ids)
            if not report.ok:
                return report
        else:
            ids = []
        existing = self.engine.rows(
            PERSON_BBOX_VALID, {**key, "subject_id": subject_id}
        )
        if existing:
            raise DuplicateKey(f"subject {subject_id} already annotated for {key}")
        self.engine.insert(PERSON_BBOX_VALID, [{
            **key,
            "subject_id": subject_id,
            "keep_tracks": ids,
            "annotator": annotator,
            "created_at": utc_now_iso(),
        }])
        return annotation.SelectionReport(ok=True)

    def annotate_auto(self, project: Optional[str] = None) -> int:
        """Apply single-tracklet auto-selection everywhere it is possible
        and not already decided; returns the number of annotations made."""
        restriction = {"project": project} if project else None
        made = 0
        for meta in self.engine.row_metas(TRACKING_BBOX, restriction):
            if int(meta["num_tracks"]) != 1:
                continue
            key = {f: meta[f] for f in self.engine.primary_key(TRACKING_BBOX)}
            if self.engine.keys(PERSON_BBOX_VALID, key):
                continue
            row = self.engine.rows(TRACKING_BBOX, key)[0]
            ts = TrackletSet.from_payload(row)
            ann = annotation.auto_select(
                ts, VideoKey(key["project"], key["filename"])
            )
            if ann is None:
                continue
            self.engine.insert(PERSON_BBOX_VALID, [{
                **key,
                "subject_id": ann.subject_id,
                "keep_tracks": sorted(ann.selected_track_ids),
                "annotator": ann.annotator,
                "created_at": ann.created_at,
            }])
            made += 1
        return made

    def populate_all(self, reserve: bool = False,
                     worker_id: Optional[str] = None) -> dict[str, object]:
        return {
            table: self.engine.populate(table, reserve=reserve, worker_id=worker_id)
            for table in POPULATE_ORDER
        }
