"""Operator command line: import videos, select methods and populate,
inspect status, apply auto-annotation, serve the HTTP API, and collect
unreferenced blobs.

Exit codes: 0 success, 1 any per-key failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
import threading
from pathlib import Path

from . import pipeline as pl
from .config import load_config, build_pipeline
from .engine import PopulateSummary
from .errors import DuplicateKey, PosePipeError, UnsupportedMethod
from .http_service import serve


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posepipe",
        description="Pipeline engine for markerless human-movement analysis",
    )
    parser.add_argument("--config", help="TOML config path (or POSEPIPE_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_import = sub.add_parser("import", help="register videos under a project")
    p_import.add_argument("--project", required=True)
    p_import.add_argument("paths", nargs="+")

    p_pop = sub.add_parser("populate", help="compute missing rows of a table")
    p_pop.add_argument("table", choices=list(pl.POPULATE_ORDER) + ["all"])
    p_pop.add_argument("--method", help="method name to select for eligible keys")
    p_pop.add_argument("--reserve", action="store_true",
                       help="reserve keys so concurrent workers never collide")
    p_pop.add_argument("--workers", type=int, default=1)
    p_pop.add_argument("--limit", type=int)

    sub.add_parser("status", help="row counts, pending keys, and job states")

    p_auto = sub.add_parser("annotate-auto",
                            help="select subject 0 wherever a single tracklet exists")
    p_auto.add_argument("--project")

    p_serve = sub.add_parser("serve", help="run the HTTP API")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)

    sub.add_parser("gc-blobs", help="delete blobs no row references")

    p_clear = sub.add_parser("clear-error", help="make errored keys populatable again")
    p_clear.add_argument("table")

    return parser


def _cmd_import(pipe: pl.Pipeline, args) -> int:
    failures = 0
    for path in args.paths:
        path = Path(path)
        try:
            pipe.import_video(args.project, path.name, path)
            print(f"imported {args.project}/{path.name}")
        except (PosePipeError, OSError) as exc:
            print(f"failed {args.project}/{path.name}: {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


def _populate_one(pipe: pl.Pipeline, table: str, args) -> PopulateSummary:
    if args.method:
        if table not in pl.FLOWS:
            raise UnsupportedMethod(f"{table} does not take a method")
        inserted = pipe.select_method(table, args.method)
        if inserted:
            print(f"selected {args.method} for {inserted} {table} keys")
    total = PopulateSummary()
    if args.workers <= 1:
        total = pipe.engine.populate(
            table, reserve=args.reserve, limit=args.limit
        )
    else:
        summaries = []

        def work(idx: int) -> None:
            summaries.append(
                pipe.engine.populate(
                    table, reserve=True, worker_id=f"cli-{idx}", limit=args.limit
                )
            )

        threads = [
            threading.Thread(target=work, args=(i,)) for i in range(args.workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for s in summaries:
            total.succeeded += s.succeeded
            total.failed += s.failed
            total.skipped += s.skipped
    print(
        f"{table}: {total.succeeded} computed, {total.failed} failed,"
        f" {total.skipped} skipped"
    )
    return total


def _cmd_populate(pipe: pl.Pipeline, args) -> int:
    tables = list(pl.POPULATE_ORDER) if args.table == "all" else [args.table]
    if args.table == "all" and args.method:
        raise UnsupportedMethod("--method applies to a single table")
    failed = 0
    for table in tables:
        failed += _populate_one(pipe, table, args).failed
    return 1 if failed else 0


def _cmd_status(pipe: pl.Pipeline, args) -> int:
    engine = pipe.engine
    jobs = engine.job_status()
    by_table: dict[str, dict[str, int]] = {}
    for job in jobs:
        by_table.setdefault(job.table, {}).setdefault(job.status, 0)
        by_table[job.table][job.status] += 1
    print(f"{'table':28s} {'rows':>6s} {'pending':>8s} {'done':>6s} {'error':>6s} {'reserved':>9s}")
    for name in engine.table_names():
        rows = len(engine.keys(name))
        defn = engine.table(name)
        pending = (
            len(engine.keys_to_populate(name))
            if defn.kind.value == "computed"
            else 0
        )
        states = by_table.get(name, {})
        print(
            f"{name:28s} {rows:6d} {pending:8d} {states.get('done', 0):6d}"
            f" {states.get('error', 0):6d} {states.get('reserved', 0):9d}"
        )
    return 0


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        pipe = build_pipeline(config)
        if args.command == "import":
            return _cmd_import(pipe, args)
        if args.command == "populate":
            return _cmd_populate(pipe, args)
        if args.command == "status":
            return _cmd_status(pipe, args)
        if args.command == "annotate-auto":
            made = pipe.annotate_auto(args.project)
            print(f"auto-annotated {made} videos")
            return 0
        if args.command == "serve":
            print(f"serving on http://{args.host}:{args.port}")
            serve(pipe, args.host, args.port)
            return 0
        if args.command == "gc-blobs":
            removed = pipe.store.gc_blobs()
            print(f"removed {removed} unreferenced blobs")
            return 0
        if args.command == "clear-error":
            cleared = 0
            for job in pipe.engine.job_status(args.table):
                if job.status == "error":
                    cleared += pipe.engine.clear_error(args.table, job.key)
            print(f"cleared {cleared} errors on {args.table}")
            return 0
        parser.error(f"unknown command {args.command}")
        return 2
    except UnsupportedMethod as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DuplicateKey as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PosePipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
