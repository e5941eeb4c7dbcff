"""Computed-table DAG engine.

Tables are registered with their parents; a table's primary key is the
union of its parents' primary keys plus any extra key fields.  Computed
tables derive their candidate key set from the join of parent keys minus
keys already computed, and ``populate`` runs each candidate's make hook
at most once across any number of concurrent workers via an atomic
reservation ledger.

Make hooks see a read-only view of the store plus a staging inserter;
staged rows and the job's terminal status commit in one transaction, so
a failing hook never leaves partial rows.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import sqlite3
import time
import traceback
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from .errors import (
    CycleDetected,
    DuplicatePrimaryKey,
    DuplicateTable,
    ForeignKeyViolation,
    InvalidDefinition,
    NotFound,
    UnknownParent,
)
from .metastore import Database, utc_now_iso
from .serialization import decode_record, decode_record_meta, encode_record

Key = dict[str, Any]


class TableKind(str, Enum):
    MANUAL = "manual"
    LOOKUP = "lookup"
    COMPUTED = "computed"


MakeHook = Callable[[Key, "MakeContext"], None]


@dataclass(frozen=True)
class TableDef:
    name: str
    kind: TableKind
    parents: tuple[str, ...] = ()
    extra_key_fields: tuple[str, ...] = ()
    make: Optional[MakeHook] = None
    #: Optional restriction on the derived candidate key space (computed
    #: tables only), e.g. to keep invalid subjects out of downstream keys.
    key_filter: Optional[Callable[[Key], bool]] = None


@dataclass(frozen=True)
class JobRecord:
    table: str
    key_digest: str
    key: Key
    status: str  # reserved | done | error
    worker_id: str
    reserved_at: float
    finished_at: Optional[float]
    error_message: Optional[str]


@dataclass
class PopulateSummary:
    succeeded: int = 0
    failed: int = 0
    skipped: int = 0


def canonical_key_json(key: Key) -> str:
    return json.dumps(key, sort_keys=True, separators=(",", ":"))


def key_digest(key: Key) -> str:
    return hashlib.sha256(canonical_key_json(key).encode("utf-8")).hexdigest()


def default_worker_id() -> str:
    return f"{socket.gethostname()}:{os.getpid()}"


class MakeContext:
    """What a make hook may touch: reads plus a staging inserter."""

    def __init__(self, engine: "Engine", table: str, key: Key):
        self._engine = engine
        self.table = table
        self.key = key
        self.staged: list[dict] = []

    def rows(self, table: str, restriction: Optional[Key] = None) -> list[dict]:
        return self._engine.rows(table, restriction)

    def fetch1(self, table: str, restriction: Key) -> dict:
        rows = self._engine.rows(table, restriction)
        if len(rows) != 1:
            raise NotFound(
                f"expected exactly one {table} row for {restriction}, got {len(rows)}"
            )
        return rows[0]

    def insert(self, rows: Iterable[dict]) -> None:
        self.staged.extend(rows)


class Engine:
    def __init__(self, db: Database, staleness_sec: float = 900.0):
        self.db = db
        self.staleness_sec = staleness_sec
        self._tables: dict[str, TableDef] = {}

    # -- registration --------------------------------------------------------

    def register_table(self, defn: TableDef) -> str:
        if defn.name in self._tables:
            raise DuplicateTable(defn.name)
        for parent in defn.parents:
            if parent == defn.name:
                raise CycleDetected(f"{defn.name} cannot be its own parent")
            if parent not in self._tables:
                raise UnknownParent(f"{defn.name} references unknown parent {parent}")
        if defn.kind is TableKind.COMPUTED:
            if defn.make is None:
                raise InvalidDefinition(f"computed table {defn.name} needs a make hook")
            if defn.extra_key_fields:
                raise InvalidDefinition(
                    "computed tables derive keys from parents; extra key fields "
                    "belong on manual tables"
                )
        pk: list[str] = []
        for parent in defn.parents:
            for f in self.primary_key(parent):
                if f not in pk:
                    pk.append(f)
        for f in defn.extra_key_fields:
            if f not in pk:
                pk.append(f)
        if not pk:
            raise InvalidDefinition(f"table {defn.name} has an empty primary key")
        self._tables[defn.name] = defn
        # parents precede children, so the registry order is topological
        return defn.name

    def table(self, name: str) -> TableDef:
        if name not in self._tables:
            raise NotFound(f"table {name} is not registered")
        return self._tables[name]

    def table_names(self) -> list[str]:
        return list(self._tables)

    def primary_key(self, name: str) -> tuple[str, ...]:
        defn = self.table(name)
        pk: list[str] = []
        for parent in defn.parents:
            for f in self.primary_key(parent):
                if f not in pk:
                    pk.append(f)
        for f in defn.extra_key_fields:
            if f not in pk:
                pk.append(f)
        return tuple(pk)

    def edges(self) -> list[tuple[str, str]]:
        return [
            (parent, defn.name)
            for defn in self._tables.values()
            for parent in defn.parents
        ]

    def ancestors(self, name: str) -> set[str]:
        out: set[str] = set()
        stack = list(self.table(name).parents)
        while stack:
            p = stack.pop()
            if p not in out:
                out.add(p)
                stack.extend(self.table(p).parents)
        return out

    # -- rows -----------------------------------------------------------------

    def split_key(self, table: str, row: dict) -> tuple[Key, dict]:
        pk = self.primary_key(table)
        key: Key = {}
        for f in pk:
            if f not in row:
                raise ValueError(f"row for {table} is missing key field {f!r}")
            value = row[f]
            if isinstance(value, bool) or not isinstance(value, (str, int)):
                raise ValueError(f"key field {f!r} must be a string or integer")
            key[f] = value
        payload = {k: v for k, v in row.items() if k not in pk}
        return key, payload

    def insert(self, table: str, rows: Iterable[dict], _from_hook: bool = False) -> int:
        defn = self.table(table)
        if defn.kind is TableKind.COMPUTED and not _from_hook:
            raise InvalidDefinition(
                f"{table} is computed; rows come from populate, not insert"
            )
        prepared = []
        for row in rows:
            key, payload = self.split_key(table, row)
            prepared.append((key, payload))
        count = 0
        with self.db.transaction() as con:
            for key, payload in prepared:
                self._check_parents(con, defn, key)
                try:
                    con.execute(
                        "INSERT INTO rows (table_name, key_digest, key_json, payload,"
                        " created_at) VALUES (?, ?, ?, ?, ?)",
                        (
                            table,
                            key_digest(key),
                            canonical_key_json(key),
                            encode_record(payload),
                            utc_now_iso(),
                        ),
                    )
                except sqlite3.IntegrityError as exc:
                    raise DuplicatePrimaryKey(
                        f"{table} already has a row for {key}"
                    ) from exc
                count += 1
        return count

    def _check_parents(self, con: sqlite3.Connection, defn: TableDef, key: Key) -> None:
        for parent in defn.parents:
            parent_key = {f: key[f] for f in self.primary_key(parent)}
            row = con.execute(
                "SELECT 1 FROM rows WHERE table_name = ? AND key_digest = ?",
                (parent, key_digest(parent_key)),
            ).fetchone()
            if row is None:
                raise ForeignKeyViolation(
                    f"{defn.name} row {key} references missing {parent} row"
                )

    def _matching_digests(self, table: str, restriction: Optional[Key]) -> list[tuple[str, Key]]:
        con = self.db.read()
        out = []
        for digest, key_json in con.execute(
            "SELECT key_digest, key_json FROM rows WHERE table_name = ?"
            " ORDER BY key_json",
            (table,),
        ):
            key = json.loads(key_json)
            if restriction and any(key.get(f) != v for f, v in restriction.items()):
                continue
            out.append((digest, key))
        return out

    def keys(self, table: str, restriction: Optional[Key] = None) -> list[Key]:
        self.table(table)
        return [key for _, key in self._matching_digests(table, restriction)]

    def rows(self, table: str, restriction: Optional[Key] = None) -> list[dict]:
        self.table(table)
        con = self.db.read()
        out = []
        for digest, key in self._matching_digests(table, restriction):
            (payload,) = con.execute(
                "SELECT payload FROM rows WHERE table_name = ? AND key_digest = ?",
                (table, digest),
            ).fetchone()
            out.append({**key, **decode_record(payload)})
        return out

    def row_metas(self, table: str, restriction: Optional[Key] = None) -> list[dict]:
        """Rows with only their JSON metadata decoded (arrays skipped)."""
        self.table(table)
        con = self.db.read()
        out = []
        for digest, key in self._matching_digests(table, restriction):
            (payload,) = con.execute(
                "SELECT payload FROM rows WHERE table_name = ? AND key_digest = ?",
                (table, digest),
            ).fetchone()
            out.append({**key, **decode_record_meta(payload)})
        return out

    def delete_cascade(self, table: str, key: Key) -> int:
        """Remove the row and every descendant row atomically; returns the
        number of rows removed."""
        self.table(table)
        affected = [
            name
            for name in self._tables
            if name == table or table in self.ancestors(name)
        ]
        removed = 0
        with self.db.transaction() as con:
            for name in reversed(affected):
                doomed = []
                for digest, row_key in con.execute(
                    "SELECT key_digest, key_json FROM rows WHERE table_name = ?",
                    (name,),
                ).fetchall():
                    parsed = json.loads(row_key)
                    if all(parsed.get(f) == v for f, v in key.items()):
                        doomed.append(digest)
                for digest in doomed:
                    con.execute(
                        "DELETE FROM rows WHERE table_name = ? AND key_digest = ?",
                        (name, digest),
                    )
                    con.execute(
                        "DELETE FROM jobs WHERE table_name = ? AND key_digest = ?",
                        (name, digest),
                    )
                removed += len(doomed)
        return removed

    def audit_referential_integrity(self) -> list[str]:
        """Full-scan audit: every row's parent projections must exist."""
        violations = []
        for name, defn in self._tables.items():
            for key in self.keys(name):
                for parent in defn.parents:
                    parent_key = {f: key[f] for f in self.primary_key(parent)}
                    if not self.keys(parent, parent_key):
                        violations.append(
                            f"{name} row {key} missing {parent} parent {parent_key}"
                        )
        return violations

    def referenced_blob_digests(self) -> set[str]:
        con = self.db.read()
        out = set()
        for (payload,) in con.execute("SELECT payload FROM rows"):
            meta = decode_record_meta(payload)
            digest = meta.get("blob_digest")
            if isinstance(digest, str):
                out.add(digest)
        return out

    # -- candidate keys and reservation ---------------------------------------

    def _parent_key_join(self, defn: TableDef) -> list[Key]:
        merged: list[Key] = [{}]
        for parent in defn.parents:
            parent_keys = self.keys(parent)
            joined: dict[str, Key] = {}
            for base in merged:
                for pk in parent_keys:
                    shared = set(base) & set(pk)
                    if all(base[f] == pk[f] for f in shared):
                        candidate = {**base, **pk}
                        joined[canonical_key_json(candidate)] = candidate
            merged = list(joined.values())
        return sorted(merged, key=canonical_key_json)

    def keys_to_populate(self, table: str) -> list[Key]:
        """Candidate keys: join of parent keys minus computed rows, minus
        live reservations, minus errors awaiting an explicit clear."""
        defn = self.table(table)
        if defn.kind is not TableKind.COMPUTED:
            raise InvalidDefinition(f"{table} is not a computed table")
        candidates = self._parent_key_join(defn)
        if defn.key_filter is not None:
            candidates = [k for k in candidates if defn.key_filter(k)]
        have = {key_digest(k) for k in self.keys(table)}
        blocked = set()
        now = time.time()
        con = self.db.read()
        for digest, status, reserved_at in con.execute(
            "SELECT key_digest, status, reserved_at FROM jobs WHERE table_name = ?",
            (table,),
        ):
            if status == "error":
                blocked.add(digest)
            elif status == "reserved" and now - reserved_at < self.staleness_sec:
                blocked.add(digest)
        return [
            k
            for k in candidates
            if key_digest(k) not in have and key_digest(k) not in blocked
        ]

    def reserve(self, table: str, key: Key, worker_id: str) -> bool:
        """Atomic compare-and-set; exactly one concurrent caller wins.

        Done keys are never re-reservable.  A stale reservation (older
        than the staleness timeout) is taken over.  An error record may
        be re-reserved explicitly; populate itself never retries errors.
        """
        defn = self.table(table)
        if defn.kind is not TableKind.COMPUTED:
            raise InvalidDefinition(f"{table} is not a computed table")
        digest = key_digest(key)
        now = time.time()
        with self.db.transaction() as con:
            row = con.execute(
                "SELECT status, reserved_at FROM jobs WHERE table_name = ?"
                " AND key_digest = ?",
                (table, digest),
            ).fetchone()
            if row is None:
                con.execute(
                    "INSERT INTO jobs (table_name, key_digest, key_json, status,"
                    " worker_id, reserved_at) VALUES (?, ?, ?, 'reserved', ?, ?)",
                    (table, digest, canonical_key_json(key), worker_id, now),
                )
                return True
            status, reserved_at = row
            if status == "done":
                return False
            if status == "reserved" and now - reserved_at < self.staleness_sec:
                return False
            con.execute(
                "UPDATE jobs SET status = 'reserved', worker_id = ?, reserved_at = ?,"
                " finished_at = NULL, error_message = NULL"
                " WHERE table_name = ? AND key_digest = ?",
                (worker_id, now, table, digest),
            )
            return True

    def _finish_job(
        self,
        con: sqlite3.Connection,
        table: str,
        key: Key,
        status: str,
        worker_id: str,
        message: Optional[str] = None,
    ) -> None:
        now = time.time()
        con.execute(
            "INSERT INTO jobs (table_name, key_digest, key_json, status, worker_id,"
            " reserved_at, finished_at, error_message)"
            " VALUES (?, ?, ?, ?, ?, ?, ?, ?)"
            " ON CONFLICT (table_name, key_digest) DO UPDATE SET status = ?,"
            " worker_id = ?, finished_at = ?, error_message = ?",
            (
                table,
                key_digest(key),
                canonical_key_json(key),
                status,
                worker_id,
                now,
                now,
                message,
                status,
                worker_id,
                now,
                message,
            ),
        )

    def populate(
        self,
        table: str,
        reserve: bool = False,
        worker_id: Optional[str] = None,
        limit: Optional[int] = None,
        keys: Optional[list[Key]] = None,
    ) -> PopulateSummary:
        """Compute missing rows; per-key failures are ledgered, not raised."""
        defn = self.table(table)
        if defn.kind is not TableKind.COMPUTED:
            raise InvalidDefinition(f"{table} is not a computed table")
        worker = worker_id or default_worker_id()
        candidates = keys if keys is not None else self.keys_to_populate(table)
        if limit is not None:
            candidates = candidates[:limit]
        summary = PopulateSummary()
        for key in candidates:
            if reserve and not self.reserve(table, key, worker):
                summary.skipped += 1
                continue
            self.db.read().execute(
                "INSERT INTO make_log (table_name, key_digest, worker_id, started_at)"
                " VALUES (?, ?, ?, ?)",
                (table, key_digest(key), worker, time.time()),
            )
            ctx = MakeContext(self, table, key)
            try:
                defn.make(key, ctx)
                staged = ctx.staged
                if not staged:
                    raise RuntimeError(f"make hook for {table} staged no rows")
                for row in staged:
                    staged_key, _ = self.split_key(table, row)
                    if staged_key != key:
                        raise RuntimeError(
                            f"make hook staged key {staged_key}, expected {key}"
                        )
                prepared = [self.split_key(table, row) for row in staged]
                with self.db.transaction() as con:
                    for row_key, payload in prepared:
                        self._check_parents(con, defn, row_key)
                        con.execute(
                            "INSERT INTO rows (table_name, key_digest, key_json,"
                            " payload, created_at) VALUES (?, ?, ?, ?, ?)",
                            (
                                table,
                                key_digest(row_key),
                                canonical_key_json(row_key),
                                encode_record(payload),
                                utc_now_iso(),
                            ),
                        )
                    self._finish_job(con, table, key, "done", worker)
                summary.succeeded += 1
            except Exception as exc:  # noqa: BLE001 - per-key isolation
                tail = "".join(traceback.format_exception_only(type(exc), exc))
                tail = tail.strip()[-500:]
                with self.db.transaction() as con:
                    self._finish_job(con, table, key, "error", worker, tail)
                summary.failed += 1
        return summary

    # -- job ledger ------------------------------------------------------------

    def job_status(self, table: Optional[str] = None) -> list[JobRecord]:
        con = self.db.read()
        query = (
            "SELECT table_name, key_digest, key_json, status, worker_id,"
            " reserved_at, finished_at, error_message FROM jobs"
        )
        params: tuple = ()
        if table is not None:
            query += " WHERE table_name = ?"
            params = (table,)
        return [
            JobRecord(
                table=row[0],
                key_digest=row[1],
                key=json.loads(row[2]),
                status=row[3],
                worker_id=row[4],
                reserved_at=row[5],
                finished_at=row[6],
                error_message=row[7],
            )
            for row in con.execute(query + " ORDER BY table_name, key_json", params)
        ]

    def clear_error(self, table: str, key: Key) -> bool:
        with self.db.transaction() as con:
            cur = con.execute(
                "DELETE FROM jobs WHERE table_name = ? AND key_digest = ?"
                " AND status = 'error'",
                (table, key_digest(key)),
            )
            return cur.rowcount > 0

    def reap_stale(self, table: Optional[str] = None) -> int:
        """Convert reservations older than the staleness timeout back into
        populatable keys."""
        cutoff = time.time() - self.staleness_sec
        with self.db.transaction() as con:
            if table is None:
                cur = con.execute(
                    "DELETE FROM jobs WHERE status = 'reserved' AND reserved_at < ?",
                    (cutoff,),
                )
            else:
                cur = con.execute(
                    "DELETE FROM jobs WHERE table_name = ? AND status = 'reserved'"
                    " AND reserved_at < ?",
                    (table, cutoff),
                )
            return cur.rowcount

    def make_invocations(self, table: Optional[str] = None) -> list[tuple[str, str, str]]:
        """Audit log of make-hook starts: (table, key_digest, worker)."""
        con = self.db.read()
        if table is None:
            rows = con.execute(
                "SELECT table_name, key_digest, worker_id FROM make_log ORDER BY seq"
            )
        else:
            rows = con.execute(
                "SELECT table_name, key_digest, worker_id FROM make_log"
                " WHERE table_name = ? ORDER BY seq",
                (table,),
            )
        return [tuple(r) for r in rows]
