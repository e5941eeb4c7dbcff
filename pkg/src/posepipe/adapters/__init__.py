"""Algorithm-stage abstraction: a registry keyed by (stage, method name),
standardized stage I/O with shape and NaN validation, crop and sliding-
window semantics, and dispatch to in-process reference adapters or
external processes speaking the framed wire protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .. import geometry
from ..datamodel import (
    BodyModelResult,
    BodyModelType,
    Detection,
    FullPerspective,
    Joints3D,
    Keypoints2D,
    PersonBbox,
    Skeleton,
    Stage,
    TrackletSet,
    camera_from_payload,
)
from ..errors import DuplicateMethod, ProtocolViolation, UnsupportedMethod
from . import protocol, reference

CROP_EXPAND = 1.2
LIFT_WINDOW = 27

EXECUTION_INPROCESS = "inprocess"
EXECUTION_EXTERNAL = "external"


@dataclass(frozen=True)
class AdapterSpec:
    stage: Stage
    method_name: str
    execution: str
    factory: Optional[Callable[..., Any]] = None
    params: dict = field(default_factory=dict)
    command: tuple[str, ...] = ()
    workdir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.execution == EXECUTION_EXTERNAL:
            if not self.command:
                raise ValueError("external adapters need a non-empty command")
        elif self.execution == EXECUTION_INPROCESS:
            if self.factory is None:
                raise ValueError("in-process adapters need a factory")
        else:
            raise ValueError(f"unknown execution kind {self.execution!r}")

    def build(self) -> Any:
        return self.factory(**self.params)


class Registry:
    """Adapter lookup; read-only after startup by convention."""

    def __init__(self):
        self._specs: dict[tuple[Stage, str], AdapterSpec] = {}

    def register(self, spec: AdapterSpec) -> None:
        key = (spec.stage, spec.method_name)
        if key in self._specs:
            raise DuplicateMethod(f"{spec.stage.value}/{spec.method_name}")
        self._specs[key] = spec

    def resolve(self, stage: Stage | str, method_name: str) -> AdapterSpec:
        spec = self._specs.get((Stage(stage), method_name))
        if spec is None:
            raise UnsupportedMethod(
                f"Unsupported {Stage(stage).value} method: {method_name}"
            )
        return spec

    def methods(self, stage: Stage | str) -> list[str]:
        return sorted(
            name for (st, name) in self._specs if st is Stage(stage)
        )


def register_reference_adapters(
    registry: Registry, camera: FullPerspective, depth: float
) -> None:
    """The deterministic reference set; lifting and body-model fitting are
    camera-aware, so they carry the scene camera and depth plane."""
    registry.register(
        AdapterSpec(Stage.TRACKING, "ref-color", EXECUTION_INPROCESS,
                    factory=reference.ColorTracker)
    )
    registry.register(
        AdapterSpec(Stage.TOPDOWN, "ref-disk", EXECUTION_INPROCESS,
                    factory=reference.DiskKeypointDetector)
    )
    registry.register(
        AdapterSpec(
            Stage.LIFTING,
            "ref-backproject",
            EXECUTION_INPROCESS,
            factory=reference.BackprojectLifter,
            params={
                "fx": camera.fx,
                "fy": camera.fy,
                "cx": camera.cx,
                "cy": camera.cy,
                "depth": depth,
            },
        )
    )
    registry.register(
        AdapterSpec(
            Stage.BODYMODEL,
            "ref-rigid",
            EXECUTION_INPROCESS,
            factory=reference.RigidBodyFitter,
            params={"camera": camera.to_payload(), "depth": depth},
        )
    )
    registry.register(
        AdapterSpec(Stage.FACE, "ref-face", EXECUTION_INPROCESS,
                    factory=reference.FaceDetector)
    )


def expand_and_square_bbox(
    bbox, width: int, height: int, factor: float = CROP_EXPAND
) -> tuple[int, int, int, int]:
    """Grow a TLWH bbox by ``factor``, square it on the larger side, and
    clamp to the image; returns integer (x0, y0, x1, y1) crop bounds."""
    x, y, w, h = (float(v) for v in bbox)
    cx = x + w / 2.0
    cy = y + h / 2.0
    side = factor * max(w, h, 1.0)
    x0 = max(0, int(math.floor(cx - side / 2.0)))
    x1 = min(width, int(math.ceil(cx + side / 2.0)))
    y0 = max(0, int(math.floor(cy - side / 2.0)))
    y1 = min(height, int(math.ceil(cy + side / 2.0)))
    x0 = min(x0, width - 1)
    y0 = min(y0, height - 1)
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def build_lift_windows(data: np.ndarray, window: int = LIFT_WINDOW) -> np.ndarray:
    """frames x J x C into frames x window x J x C, centered per frame.

    Indices past either end replicate the first or last valid frame.
    """
    count = data.shape[0]
    missing = np.isnan(data).all(axis=(1, 2))
    valid_idx = np.nonzero(~missing)[0]
    first_valid = int(valid_idx[0]) if valid_idx.size else 0
    last_valid = int(valid_idx[-1]) if valid_idx.size else count - 1
    offsets = np.arange(window) - window // 2
    idx = np.arange(count)[:, None] + offsets[None, :]
    idx = np.where(idx < 0, first_valid, idx)
    idx = np.where(idx >= count, last_valid, idx)
    return data[idx]


def _external(spec: AdapterSpec, stage: Stage, params: dict,
              arrays: dict[str, np.ndarray], frames: Optional[np.ndarray],
              fps: float) -> tuple[dict, dict[str, np.ndarray]]:
    return protocol.run_external(
        spec.command, spec.workdir, stage.value, spec.method_name,
        params, arrays, frames, fps,
    )


def _require_array(arrays: dict[str, np.ndarray], name: str, shape: tuple) -> np.ndarray:
    if name not in arrays:
        raise ProtocolViolation(f"result is missing array {name!r}")
    a = arrays[name]
    if len(a.shape) != len(shape) or any(
        expected is not None and actual != expected
        for actual, expected in zip(a.shape, shape)
    ):
        raise ProtocolViolation(f"array {name!r} has shape {a.shape}, wanted {shape}")
    return a


def run_tracking(frames: np.ndarray, spec: AdapterSpec, fps: float = 30.0) -> TrackletSet:
    """Produce per-frame detections grouped over time into tracklets."""
    if spec.stage is not Stage.TRACKING:
        raise ValueError(f"{spec.method_name} is not a tracking adapter")
    if spec.execution == EXECUTION_INPROCESS:
        return spec.build().track(frames)
    meta, _ = _external(spec, Stage.TRACKING, {}, {}, frames, fps)
    try:
        tracks = meta["tracks"]
        if len(tracks) != frames.shape[0]:
            raise ValueError(f"{len(tracks)} track frames for {frames.shape[0]} video frames")
        per_frame = [
            [
                Detection(
                    frame_idx=i,
                    track_id=int(d["track_id"]),
                    bbox=tuple(float(v) for v in d["bbox"]),
                    confidence=float(d["confidence"]),
                )
                for d in dets
            ]
            for i, dets in enumerate(tracks)
        ]
        ts = TrackletSet.from_frames(per_frame)
        if "num_tracks" in meta and int(meta["num_tracks"]) != ts.num_tracks:
            raise ValueError("num_tracks disagrees with the distinct track ids")
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed tracking result: {exc}") from exc
    return ts


def _crops(frames: np.ndarray, person: PersonBbox):
    height, width = frames.shape[1:3]
    present = person.present
    out = []
    for f in range(frames.shape[0]):
        if not present[f]:
            out.append(None)
            continue
        x0, y0, x1, y1 = expand_and_square_bbox(person.bboxes[f], width, height)
        out.append((frames[f, y0:y1, x0:x1], (x0, y0)))
    return out


def run_topdown(
    frames: np.ndarray,
    person: PersonBbox,
    skel: Skeleton,
    spec: AdapterSpec,
    fps: float = 30.0,
) -> Keypoints2D:
    """Detect keypoints on the person crop of every present frame; frames
    without a bbox come back as all-NaN rows."""
    if spec.stage is not Stage.TOPDOWN:
        raise ValueError(f"{spec.method_name} is not a top-down adapter")
    if person.frame_count != frames.shape[0]:
        raise ValueError("person track length differs from the frame count")
    count = frames.shape[0]
    if spec.execution == EXECUTION_INPROCESS:
        detector = spec.build()
        data = np.full((count, skel.joint_count, 3), np.nan)
        for f, item in enumerate(_crops(frames, person)):
            if item is None:
                continue
            crop, origin = item
            data[f] = detector.detect(crop, origin, skel)
    else:
        meta, arrays = _external(
            spec,
            Stage.TOPDOWN,
            {"crop_expand": CROP_EXPAND, "skeleton": skel.id.value},
            {"bboxes": person.bboxes},
            frames,
            fps,
        )
        data = _require_array(arrays, "keypoints", (count, skel.joint_count, 3))
    data = np.array(data, dtype=np.float64)
    data[~person.present] = np.nan
    try:
        return Keypoints2D(data=data, skeleton=skel.id)
    except ValueError as exc:
        raise ProtocolViolation(f"malformed keypoints: {exc}") from exc


def run_lifting(kp: Keypoints2D, spec: AdapterSpec) -> Joints3D:
    """Lift 2D keypoint sequences through a centered sliding window; an
    all-NaN input frame stays all-NaN in the output."""
    if spec.stage is not Stage.LIFTING:
        raise ValueError(f"{spec.method_name} is not a lifting adapter")
    windows = build_lift_windows(kp.data)
    if spec.execution == EXECUTION_INPROCESS:
        out = np.asarray(spec.build().lift(windows), dtype=np.float64)
    else:
        _, arrays = _external(
            spec,
            Stage.LIFTING,
            {
                "skeleton": kp.skeleton.value,
                "window": LIFT_WINDOW,
                "center": LIFT_WINDOW // 2,
            },
            {"windows": windows},
            None,
            30.0,
        )
        out = _require_array(
            arrays, "joints3d", (kp.frame_count, kp.joint_count, 3)
        ).copy()
    if out.shape != (kp.frame_count, kp.joint_count, 3):
        raise ProtocolViolation(f"lifted array has shape {out.shape}")
    out[kp.missing_frames] = np.nan
    return Joints3D(data=out, skeleton=kp.skeleton)


def run_bodymodel(
    frames: np.ndarray,
    person: PersonBbox,
    spec: AdapterSpec,
    fps: float = 30.0,
) -> BodyModelResult:
    """Fit a parametric body model; whatever rotation representation the
    adapter speaks is standardized to rotation vectors, and the returned
    2D keypoints are always the camera reprojection of the 3D joints."""
    if spec.stage is not Stage.BODYMODEL:
        raise ValueError(f"{spec.method_name} is not a body-model adapter")
    if person.frame_count != frames.shape[0]:
        raise ValueError("person track length differs from the frame count")
    if spec.execution == EXECUTION_INPROCESS:
        result = spec.build().fit(_crops(frames, person))
        camera = result["camera"]
    else:
        meta, arrays = _external(
            spec, Stage.BODYMODEL, {"crop_expand": CROP_EXPAND},
            {"bboxes": person.bboxes}, frames, fps,
        )
        result = {**meta, **arrays}
        try:
            camera = camera_from_payload(meta["camera"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolViolation(f"malformed camera payload: {exc}") from exc
    try:
        pose_format = result.get("pose_format", "rotvec")
        pose = _standardize_batch(np.asarray(result["pose"], dtype=np.float64), pose_format)
        orient = _standardize_batch(
            np.asarray(result["global_orient"], dtype=np.float64), pose_format
        )
        joints3d = np.asarray(result["joints3d"], dtype=np.float64)
        reproj = geometry.project_sequence(camera, joints3d)
        return BodyModelResult(
            model_type=BodyModelType(str(result["model_type"]).lower()),
            shape=np.asarray(result["shape"], dtype=np.float64),
            pose=pose,
            global_orient=orient,
            global_transl=np.asarray(result["global_transl"], dtype=np.float64),
            joints3d=joints3d,
            reproj2d=reproj,
            camera=camera,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed body-model result: {exc}") from exc


def _standardize_batch(values: np.ndarray, fmt: str) -> np.ndarray:
    """Rotation standardization that lets NaN (absent) entries through."""
    item_ndim = 2 if fmt == "matrix" else 1
    lead_shape = values.shape[:-item_ndim]
    flat = values.reshape((-1,) + values.shape[len(values.shape) - item_ndim :])
    out = np.full((flat.shape[0], 3), np.nan)
    for i, item in enumerate(flat):
        if np.isnan(item).any():
            continue
        out[i] = geometry.standardize_rotations(item[None, ...], fmt)[0]
    return out.reshape(lead_shape + (3,))


def run_openface_detect(
    frames: np.ndarray, spec: AdapterSpec, fps: float = 30.0
) -> list[list[np.ndarray]]:
    """Bottom-up facial keypoint sets for all people in every frame."""
    if spec.stage is not Stage.FACE:
        raise ValueError(f"{spec.method_name} is not a face adapter")
    if spec.execution == EXECUTION_INPROCESS:
        return spec.build().detect(frames)
    meta, _ = _external(spec, Stage.FACE, {}, {}, frames, fps)
    try:
        faces = meta["faces"]
        if len(faces) != frames.shape[0]:
            raise ValueError("face list length differs from the frame count")
        return [
            [np.asarray(face, dtype=np.float64).reshape(-1, 2) for face in per_frame]
            for per_frame in faces
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed face result: {exc}") from exc
