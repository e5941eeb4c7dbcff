"""HTTP API for the annotation UI and automation.

A thin adapter over the pipeline facade: every endpoint's behavior is
the corresponding library call.  Overlay streams are rendered lazily
into the standard render tables (blurred base, never the raw video) and
served from blob storage.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, unquote, urlparse

from . import pipeline as pl
from .errors import DuplicateKey, NotFound, PosePipeError, UnsupportedMethod
from .metastore import BlobRef

_VIDEO_ROUTE = re.compile(r"^/api/videos/([^/]+)/([^/]+)/(tracklets|overlay|annotation)$")


class ServiceError(Exception):
    def __init__(self, status: int, body: dict):
        super().__init__(body.get("error", "error"))
        self.status = status
        self.body = body


class PipelineService:
    def __init__(self, pipe: pl.Pipeline):
        self.pipeline = pipe
        self.engine = pipe.engine
        self._populate_threads: list[threading.Thread] = []

    # -- state ------------------------------------------------------------------

    def _video_key(self, project: str, filename: str) -> dict:
        key = {"project": project, "filename": filename}
        if not self.engine.keys(pl.VIDEO, key):
            raise ServiceError(404, {"error": "unknown_video", **key})
        return key

    def _annotation_state(self, key: dict) -> tuple[list[dict], int]:
        rows = self.engine.row_metas(pl.PERSON_BBOX_VALID, key)
        return rows, len(rows)

    def _video_status(self, annotations: list[dict]) -> str:
        subjects = [int(r["subject_id"]) for r in annotations]
        if any(s >= 0 for s in subjects):
            return "annotated"
        if any(s < 0 for s in subjects):
            return "invalid"
        return "pending"

    def list_videos(self, project: Optional[str] = None) -> list[dict]:
        restriction = {"project": project} if project else None
        out = []
        for row in self.engine.row_metas(pl.VIDEO, restriction):
            key = {"project": row["project"], "filename": row["filename"]}
            annotations, version = self._annotation_state(key)
            tracking = [
                {
                    "tracking_method": meta["tracking_method"],
                    "num_tracks": meta["num_tracks"],
                }
                for meta in self.engine.row_metas(pl.TRACKING_BBOX, key)
            ]
            out.append(
                {
                    **key,
                    "width": row["width"],
                    "height": row["height"],
                    "fps": row["fps"],
                    "frame_count": row["frame_count"],
                    "tracking": tracking,
                    "annotations": [
                        {
                            "subject_id": r["subject_id"],
                            "tracking_method": r["tracking_method"],
                            "annotator": r["annotator"],
                        }
                        for r in annotations
                    ],
                    "status": self._video_status(annotations),
                    "version": version,
                }
            )
        return out

    def tracklet_summary(self, project: str, filename: str) -> dict:
        key = self._video_key(project, filename)
        methods = []
        for row in self.engine.rows(pl.TRACKING_BBOX, key):
            from .datamodel import TrackletSet

            ts = TrackletSet.from_payload(row)
            tracks = []
            for tid in sorted(ts.track_ids()):
                frames = ts.frames_of(tid)
                confs = [
                    det.confidence
                    for f in frames
                    for det in ts.per_frame[f]
                    if det.track_id == tid
                ]
                tracks.append(
                    {
                        "track_id": tid,
                        "first_frame": frames[0],
                        "last_frame": frames[-1],
                        "frame_count": len(frames),
                        "frames": frames,
                        "mean_confidence": sum(confs) / len(confs),
                    }
                )
            methods.append(
                {
                    "tracking_method": row["tracking_method"],
                    "num_tracks": ts.num_tracks,
                    "tracks": tracks,
                }
            )
        annotations, version = self._annotation_state(key)
        return {
            **key,
            "tracking_methods": methods,
            "status": self._video_status(annotations),
            "version": version,
        }

    def _single_tracking_method(self, key: dict) -> int:
        methods = [
            int(m["tracking_method"])
            for m in self.engine.keys(pl.TRACKING_BBOX, key)
        ]
        if not methods:
            raise ServiceError(409, {"error": "not_ready", "missing": pl.TRACKING_BBOX})
        if len(methods) > 1:
            raise ServiceError(
                422, {"error": "ambiguous_tracking_method", "methods": methods}
            )
        return methods[0]

    def submit_annotation(self, project: str, filename: str, body: dict) -> dict:
        key = self._video_key(project, filename)
        if not isinstance(body, dict) or "subject_id" not in body:
            raise ServiceError(422, {"error": "malformed_body"})
        try:
            subject_id = int(body["subject_id"])
            track_ids = [int(t) for t in body.get("track_ids", [])]
        except (TypeError, ValueError):
            raise ServiceError(422, {"error": "malformed_body"}) from None
        if subject_id < -1 or (subject_id == -1 and track_ids):
            raise ServiceError(422, {"error": "malformed_body"})
        if subject_id >= 0 and not track_ids:
            raise ServiceError(422, {"error": "empty_selection"})
        method = body.get("tracking_method")
        method = int(method) if method is not None else self._single_tracking_method(key)
        _, version = self._annotation_state(key)
        if "version" in body and body["version"] is not None:
            if int(body["version"]) != version:
                raise ServiceError(
                    409, {"error": "stale_version", "version": version}
                )
        try:
            report = self.pipeline.annotate(
                project,
                filename,
                tracking_method=method,
                subject_id=subject_id,
                track_ids=track_ids,
                annotator=str(body.get("annotator", "ui")),
            )
        except NotFound as exc:
            raise ServiceError(409, {"error": "not_ready", "detail": str(exc)}) from exc
        except DuplicateKey:
            raise ServiceError(409, {"error": "already_annotated"}) from None
        except PosePipeError as exc:
            raise ServiceError(422, {"error": type(exc).__name__, "detail": str(exc)}) from exc
        if not report.ok:
            raise ServiceError(
                409,
                {"error": "overlap", "frames": list(report.conflicting_frames)},
            )
        return {"ok": True, "version": version + 1}

    def _ensure_populated(self, table: str, key: dict) -> dict:
        if not self.engine.rows(table, key):
            self.engine.populate(table, keys=self.engine.keys_to_populate(table))
        rows = self.engine.rows(table, key)
        if not rows:
            jobs = [
                j.error_message
                for j in self.engine.job_status(table)
                if j.status == "error"
            ]
            raise ServiceError(409, {"error": "not_ready", "missing": table, "jobs": jobs})
        return rows[0]

    def overlay_stream(self, project: str, filename: str,
                       tracking_method: Optional[int] = None) -> bytes:
        key = self._video_key(project, filename)
        if tracking_method is None:
            tracking_method = self._single_tracking_method(key)
        self._ensure_populated(pl.FACE_KEYPOINTS, key)
        self._ensure_populated(pl.BLURRED_VIDEO, key)
        row = self._ensure_populated(
            pl.TRACKING_VIDEO, {**key, "tracking_method": tracking_method}
        )
        ref = BlobRef(digest=row["blob_digest"], size_bytes=int(row["blob_size"]))
        return self.pipeline.store.blobs.read_blob(ref)

    def enqueue_populate(self, body: dict) -> dict:
        if not isinstance(body, dict) or "table" not in body:
            raise ServiceError(422, {"error": "malformed_body"})
        table = str(body["table"])
        if table not in pl.POPULATE_ORDER:
            raise ServiceError(422, {"error": "unknown_table", "table": table})
        method = body.get("method")
        if method is not None:
            if table not in pl.FLOWS:
                raise ServiceError(422, {"error": "table_has_no_method", "table": table})
            try:
                self.pipeline.select_method(table, str(method))
            except UnsupportedMethod as exc:
                raise ServiceError(422, {"error": "unsupported_method",
                                         "detail": str(exc)}) from exc
        pending = len(self.engine.keys_to_populate(table))
        worker = threading.Thread(
            target=self.engine.populate,
            args=(table,),
            kwargs={"reserve": True, "worker_id": "http-populate"},
            daemon=True,
        )
        worker.start()
        self._populate_threads.append(worker)
        return {"enqueued": pending, "table": table}

    def wait_idle(self, timeout: float = 60.0) -> None:
        for worker in self._populate_threads:
            worker.join(timeout)
        self._populate_threads = [t for t in self._populate_threads if t.is_alive()]

    def jobs(self, table: Optional[str] = None) -> list[dict]:
        return [
            {
                "table": j.table,
                "key": j.key,
                "status": j.status,
                "worker_id": j.worker_id,
                "reserved_at": j.reserved_at,
                "finished_at": j.finished_at,
                "error_message": j.error_message,
            }
            for j in self.engine.job_status(table)
        ]

    # -- server -----------------------------------------------------------------

    def make_server(self, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # noqa: A003 - quiet server
                pass

            def _send(self, status: int, payload: bytes,
                      content_type: str = "application/json") -> None:
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(payload)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
                self.end_headers()
                self.wfile.write(payload)

            def _send_json(self, status: int, obj) -> None:
                self._send(status, json.dumps(obj).encode("utf-8"))

            def _body(self) -> dict:
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                if not raw:
                    raise ServiceError(422, {"error": "empty_body"})
                try:
                    obj = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    raise ServiceError(422, {"error": "malformed_json"}) from None
                if not isinstance(obj, dict):
                    raise ServiceError(422, {"error": "malformed_body"})
                return obj

            def do_OPTIONS(self) -> None:  # noqa: N802
                self._send(204, b"")

            def do_GET(self) -> None:  # noqa: N802
                try:
                    parsed = urlparse(self.path)
                    query = parse_qs(parsed.query)
                    if parsed.path == "/":
                        self._send_json(200, {"service": "posepipe"})
                        return
                    if parsed.path == "/api/videos":
                        project = query.get("project", [None])[0]
                        self._send_json(200, {"videos": service.list_videos(project)})
                        return
                    if parsed.path == "/api/jobs":
                        table = query.get("table", [None])[0]
                        self._send_json(200, {"jobs": service.jobs(table)})
                        return
                    match = _VIDEO_ROUTE.match(parsed.path)
                    if match and match.group(3) == "tracklets":
                        self._send_json(
                            200,
                            service.tracklet_summary(
                                unquote(match.group(1)), unquote(match.group(2))
                            ),
                        )
                        return
                    if match and match.group(3) == "overlay":
                        method = query.get("tracking_method", [None])[0]
                        payload = service.overlay_stream(
                            unquote(match.group(1)),
                            unquote(match.group(2)),
                            int(method) if method is not None else None,
                        )
                        self._send(200, payload, "application/octet-stream")
                        return
                    self._send_json(404, {"error": "no_such_route"})
                except ServiceError as exc:
                    self._send_json(exc.status, exc.body)

            def do_POST(self) -> None:  # noqa: N802
                try:
                    parsed = urlparse(self.path)
                    if parsed.path == "/api/populate":
                        self._send_json(200, service.enqueue_populate(self._body()))
                        return
                    match = _VIDEO_ROUTE.match(parsed.path)
                    if match and match.group(3) == "annotation":
                        body = self._body()
                        result = service.submit_annotation(
                            unquote(match.group(1)), unquote(match.group(2)), body
                        )
                        self._send_json(200, result)
                        return
                    self._send_json(404, {"error": "no_such_route"})
                except ServiceError as exc:
                    self._send_json(exc.status, exc.body)

        return ThreadingHTTPServer((host, port), Handler)


def serve(pipe: pl.Pipeline, host: str = "127.0.0.1", port: int = 8765) -> None:
    server = PipelineService(pipe).make_server(host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
