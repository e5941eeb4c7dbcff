"""Persistent metadata store and content-addressed blob store.

Metadata lives in a single SQLite file (schema below, versioned via
``PRAGMA user_version``); large payloads such as videos live outside the
database as files named by their SHA-256 digest under
``<root>/<first two hex chars>/<digest>``.  Every retrieval re-hashes the
payload and refuses to hand out corrupted bytes.
"""

from __future__ import annotations

import errno
import hashlib
import os
import shutil
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Protocol

from .errors import (
    ChecksumMismatch,
    DuplicateKey,
    NotFound,
    ProbeFailed,
    StorageFull,
    StoreRootUnwritable,
)

SCHEMA_VERSION = 1

_DDL = """
CREATE TABLE IF NOT EXISTS rows (
    table_name TEXT NOT NULL,
    key_digest TEXT NOT NULL,
    key_json   TEXT NOT NULL,
    payload    BLOB NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (table_name, key_digest)
);
CREATE TABLE IF NOT EXISTS jobs (
    table_name    TEXT NOT NULL,
    key_digest    TEXT NOT NULL,
    key_json      TEXT NOT NULL,
    status        TEXT NOT NULL CHECK (status IN ('reserved', 'done', 'error')),
    worker_id     TEXT NOT NULL,
    reserved_at   REAL NOT NULL,
    finished_at   REAL,
    error_message TEXT,
    PRIMARY KEY (table_name, key_digest)
);
CREATE TABLE IF NOT EXISTS make_log (
    seq        INTEGER PRIMARY KEY AUTOINCREMENT,
    table_name TEXT NOT NULL,
    key_digest TEXT NOT NULL,
    worker_id  TEXT NOT NULL,
    started_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS render_cache (
    project    TEXT NOT NULL,
    filename   TEXT NOT NULL,
    kind       TEXT NOT NULL,
    method     INTEGER NOT NULL,
    digest     TEXT NOT NULL,
    size_bytes INTEGER NOT NULL,
    PRIMARY KEY (project, filename, kind, method)
);
"""


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class Database:
    """Thread-aware SQLite wrapper; one connection per thread, WAL mode,
    short immediate transactions for every write."""

    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        self._local = threading.local()
        con = self.connection()
        version = con.execute("PRAGMA user_version").fetchone()[0]
        if version == 0:
            con.executescript(_DDL)  # autocommits
            con.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")
        elif version != SCHEMA_VERSION:
            raise RuntimeError(
                f"store schema version {version} != supported {SCHEMA_VERSION}"
            )

    def connection(self) -> sqlite3.Connection:
        con = getattr(self._local, "con", None)
        if con is None:
            con = sqlite3.connect(self.path, timeout=60.0, isolation_level=None)
            con.execute("PRAGMA journal_mode=WAL")
            con.execute("PRAGMA busy_timeout=60000")
            con.execute("PRAGMA foreign_keys=ON")
            self._local.con = con
        return con

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        con = self.connection()
        con.execute("BEGIN IMMEDIATE")
        try:
            yield con
        except BaseException:
            con.execute("ROLLBACK")
            raise
        con.execute("COMMIT")

    def read(self) -> sqlite3.Connection:
        return self.connection()

    def close(self) -> None:
        con = getattr(self._local, "con", None)
        if con is not None:
            con.close()
            self._local.con = None


@dataclass(frozen=True)
class BlobRef:
    digest: str  # 64 hex chars of SHA-256
    size_bytes: int

    def __post_init__(self) -> None:
        if len(self.digest) != 64 or any(c not in "0123456789abcdef" for c in self.digest):
            raise ValueError("digest must be 64 lowercase hex characters")
        if self.size_bytes < 0:
            raise ValueError("size must be >= 0")


def _map_oserror(exc: OSError) -> Exception:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    if exc.errno in (errno.EACCES, errno.EROFS, errno.EPERM):
        return StoreRootUnwritable(str(exc))
    return exc


class BlobStore:
    """Content-addressed file store; identical content is stored once."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise _map_oserror(exc) from exc

    def path_of(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def put_blob(self, payload: bytes) -> BlobRef:
        digest = hashlib.sha256(payload).hexdigest()
        ref = BlobRef(digest=digest, size_bytes=len(payload))
        target = self.path_of(digest)
        if target.exists():
            return ref
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(f".tmp-{os.getpid()}-{threading.get_ident()}")
            with open(tmp, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, target)
        except OSError as exc:
            raise _map_oserror(exc) from exc
        return ref

    def put_blob_file(self, source: str | os.PathLike) -> BlobRef:
        hasher = hashlib.sha256()
        size = 0
        with open(source, "rb") as fh:
            while chunk := fh.read(1 << 20):
                hasher.update(chunk)
                size += len(chunk)
        digest = hasher.hexdigest()
        ref = BlobRef(digest=digest, size_bytes=size)
        target = self.path_of(digest)
        if target.exists():
            return ref
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(f".tmp-{os.getpid()}-{threading.get_ident()}")
            shutil.copyfile(source, tmp)
            os.replace(tmp, target)
        except OSError as exc:
            raise _map_oserror(exc) from exc
        return ref

    def get_blob(self, ref: BlobRef, dest_dir: str | os.PathLike) -> Path:
        """Copy the payload into ``dest_dir``, validating its checksum."""
        source = self.path_of(ref.digest)
        if not source.exists():
            raise NotFound(f"blob {ref.digest} not in store")
        Path(dest_dir).mkdir(parents=True, exist_ok=True)
        dest = Path(dest_dir) / ref.digest
        hasher = hashlib.sha256()
        size = 0
        with open(source, "rb") as src, open(dest, "wb") as out:
            while chunk := src.read(1 << 20):
                hasher.update(chunk)
                size += len(chunk)
                out.write(chunk)
        if hasher.hexdigest() != ref.digest or size != ref.size_bytes:
            dest.unlink(missing_ok=True)
            raise ChecksumMismatch(
                f"stored blob {ref.digest} failed checksum validation"
            )
        return dest

    def read_blob(self, ref: BlobRef) -> bytes:
        source = self.path_of(ref.digest)
        if not source.exists():
            raise NotFound(f"blob {ref.digest} not in store")
        payload = source.read_bytes()
        if hashlib.sha256(payload).hexdigest() != ref.digest:
            raise ChecksumMismatch(
                f"stored blob {ref.digest} failed checksum validation"
            )
        return payload

    def digests(self) -> set[str]:
        out = set()
        for sub in self.root.iterdir():
            if sub.is_dir() and len(sub.name) == 2:
                out.update(p.name for p in sub.iterdir() if len(p.name) == 64)
        return out

    def gc(self, referenced: set[str]) -> int:
        """Delete blobs not in ``referenced``; explicit only, never automatic."""
        removed = 0
        for digest in self.digests() - referenced:
            self.path_of(digest).unlink(missing_ok=True)
            removed += 1
        return removed


@dataclass(frozen=True)
class VideoMeta:
    width: int
    height: int
    fps: float
    frame_count: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.frame_count < 1:
            raise ValueError("width, height, frame_count must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")


class FrameSource(Protocol):
    """Decoder abstraction used for probing and reading video files."""

    def probe(self, path: str | os.PathLike) -> VideoMeta: ...

    def read(self, path: str | os.PathLike):
        """Return frames as a frames x H x W x 3 uint8 array."""
        ...


@dataclass(frozen=True)
class VideoRecord:
    project: str
    filename: str
    blob: BlobRef
    width: int
    height: int
    fps: float
    frame_count: int
    imported_at: str


VIDEO_TABLE = "video"


class MetaStore:
    """Video-level facade over the engine's table rows and the blob store."""

    def __init__(self, engine, blobs: BlobStore):
        self.engine = engine
        self.blobs = blobs

    def import_video(
        self,
        project: str,
        filename: str,
        source: str | os.PathLike,
        frame_source: FrameSource,
    ) -> VideoRecord:
        key = {"project": project, "filename": filename}
        if self.engine.rows(VIDEO_TABLE, key):
            raise DuplicateKey(f"video {project}/{filename} already registered")
        try:
            meta = frame_source.probe(source)
        except Exception as exc:
            if isinstance(exc, ProbeFailed):
                raise
            raise ProbeFailed(f"cannot probe {source}: {exc}") from exc
        ref = self.blobs.put_blob_file(source)
        imported_at = utc_now_iso()
        self.engine.insert(
            VIDEO_TABLE,
            [
                {
                    **key,
                    "blob_digest": ref.digest,
                    "blob_size": ref.size_bytes,
                    "width": meta.width,
                    "height": meta.height,
                    "fps": meta.fps,
                    "frame_count": meta.frame_count,
                    "imported_at": imported_at,
                }
            ],
        )
        return VideoRecord(
            project=project,
            filename=filename,
            blob=ref,
            width=meta.width,
            height=meta.height,
            fps=meta.fps,
            frame_count=meta.frame_count,
            imported_at=imported_at,
        )

    def video_record(self, project: str, filename: str) -> VideoRecord:
        rows = self.engine.rows(VIDEO_TABLE, {"project": project, "filename": filename})
        if not rows:
            raise NotFound(f"video {project}/{filename} not registered")
        row = rows[0]
        return VideoRecord(
            project=row["project"],
            filename=row["filename"],
            blob=BlobRef(digest=row["blob_digest"], size_bytes=int(row["blob_size"])),
            width=int(row["width"]),
            height=int(row["height"]),
            fps=float(row["fps"]),
            frame_count=int(row["frame_count"]),
            imported_at=row["imported_at"],
        )

    @contextmanager
    def working_copy(
        self, project: str, filename: str, scratch_dir: str | os.PathLike
    ) -> Iterator[Path]:
        """Checksum-validated local copy, removed when the caller is done."""
        record = self.video_record(project, filename)
        path = self.blobs.get_blob(record.blob, scratch_dir)
        try:
            yield path
        finally:
            path.unlink(missing_ok=True)

    def delete_video_cascade(self, project: str, filename: str) -> int:
        key = {"project": project, "filename": filename}
        if not self.engine.rows(VIDEO_TABLE, key):
            raise NotFound(f"video {project}/{filename} not registered")
        removed = self.engine.delete_cascade(VIDEO_TABLE, key)
        with self.engine.db.transaction() as con:
            con.execute(
                "DELETE FROM render_cache WHERE project = ? AND filename = ?",
                (project, filename),
            )
        return removed

    def referenced_digests(self) -> set[str]:
        refs = self.engine.referenced_blob_digests()
        con = self.engine.db.read()
        refs.update(
            digest for (digest,) in con.execute("SELECT digest FROM render_cache")
        )
        return refs

    def gc_blobs(self) -> int:
        return self.blobs.gc(self.referenced_digests())
