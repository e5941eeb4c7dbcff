"""Deployment configuration: store locations, encoder commands, and the
adapter registry, from a TOML file with environment-variable overrides.

Environment variables: POSEPIPE_CONFIG names the file, POSEPIPE_DB and
POSEPIPE_STORE_ROOT override the corresponding paths.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import adapters
from .datamodel import FullPerspective, Stage
from .engine import Engine
from .metastore import BlobStore, Database, MetaStore
from .pipeline import Pipeline
from .synthscene import demo_camera

ENV_CONFIG = "POSEPIPE_CONFIG"
ENV_DB = "POSEPIPE_DB"
ENV_STORE_ROOT = "POSEPIPE_STORE_ROOT"


@dataclass(frozen=True)
class ExternalAdapterConfig:
    stage: str
    method_name: str
    command: tuple[str, ...]
    workdir: Optional[str] = None


@dataclass(frozen=True)
class Config:
    db_path: str = "posepipe.sqlite"
    store_root: str = "posepipe_store"
    scratch_root: str = "posepipe_scratch"
    encoder_cmd: Optional[tuple[str, ...]] = None
    staleness_sec: float = 900.0
    face_method: str = "ref-face"
    reference_camera: FullPerspective = field(default_factory=demo_camera)
    reference_depth: float = 4.0
    external_adapters: tuple[ExternalAdapterConfig, ...] = ()


def load_config(
    path: Optional[str | Path] = None, env: Mapping[str, str] = os.environ
) -> Config:
    path = path or env.get(ENV_CONFIG)
    raw: dict = {}
    if path:
        raw = tomllib.loads(Path(path).read_text())
    camera_raw = raw.get("reference_adapters", {}).get("camera")
    camera = (
        FullPerspective(
            fx=float(camera_raw["fx"]),
            fy=float(camera_raw["fy"]),
            cx=float(camera_raw["cx"]),
            cy=float(camera_raw["cy"]),
        )
        if camera_raw
        else demo_camera()
    )
    externals = tuple(
        ExternalAdapterConfig(
            stage=entry["stage"],
            method_name=entry["method_name"],
            command=tuple(entry["command"]),
            workdir=entry.get("workdir"),
        )
        for entry in raw.get("adapter", [])
    )
    encoder = raw.get("encoder_cmd")
    return Config(
        db_path=env.get(ENV_DB) or raw.get("db", "posepipe.sqlite"),
        store_root=env.get(ENV_STORE_ROOT) or raw.get("store_root", "posepipe_store"),
        scratch_root=raw.get("scratch_root", "posepipe_scratch"),
        encoder_cmd=tuple(encoder) if encoder else None,
        staleness_sec=float(raw.get("staleness_sec", 900.0)),
        face_method=raw.get("face_method", "ref-face"),
        reference_camera=camera,
        reference_depth=float(raw.get("reference_adapters", {}).get("depth", 4.0)),
        external_adapters=externals,
    )


def build_registry(config: Config) -> adapters.Registry:
    registry = adapters.Registry()
    adapters.register_reference_adapters(
        registry, config.reference_camera, config.reference_depth
    )
    for ext in config.external_adapters:
        registry.register(
            adapters.AdapterSpec(
                stage=Stage(ext.stage),
                method_name=ext.method_name,
                execution=adapters.EXECUTION_EXTERNAL,
                command=ext.command,
                workdir=ext.workdir,
            )
        )
    return registry


def build_pipeline(config: Config) -> Pipeline:
    db = Database(config.db_path)
    engine = Engine(db, staleness_sec=config.staleness_sec)
    store = MetaStore(engine, BlobStore(config.store_root))
    pipeline = Pipeline(
        engine=engine,
        store=store,
        registry=build_registry(config),
        scratch_root=config.scratch_root,
        encoder_cmd=config.encoder_cmd,
        face_method=config.face_method,
    )
    pipeline.register_schema()
    return pipeline
