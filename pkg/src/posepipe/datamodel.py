"""Shared value types for the pipeline: keys, tracklets, keypoint arrays,
body-model parameters, skeleton tables, and camera models.

All types are immutable values with validated invariants and no I/O.  A
quiet 64-bit NaN is the single sentinel for "absent"; presence masks are
always derived from the data, never stored separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class Stage(str, Enum):
    TRACKING = "tracking"
    TOPDOWN = "topdown"
    LIFTING = "lifting"
    BODYMODEL = "bodymodel"
    FACE = "face"


#: Stages that appear in method lookup tables (face detection is a fixed
#: pipeline service, not a per-video method choice).
METHOD_STAGES = (Stage.TRACKING, Stage.TOPDOWN, Stage.LIFTING, Stage.BODYMODEL)


class SkeletonId(str, Enum):
    COCO17 = "coco17"
    WHOLEBODY133 = "wholebody133"
    SYNTHETIC13 = "synthetic13"


class BodyModelType(str, Enum):
    SMPL = "smpl"
    SMPLX = "smplx"


SMPL_SHAPE_DIM = 10
SMPL_POSE_JOINTS = 23


@dataclass(frozen=True)
class VideoKey:
    project: str
    filename: str

    def __post_init__(self) -> None:
        for name in ("project", "filename"):
            value = getattr(self, name)
            if not value:
                raise ValueError(f"{name} must be non-empty")
            if len(value.encode("utf-8")) > 255:
                raise ValueError(f"{name} exceeds 255 bytes")


@dataclass(frozen=True)
class MethodEntry:
    stage: Stage
    method_id: int
    method_name: str

    def __post_init__(self) -> None:
        if self.stage not in METHOD_STAGES:
            raise ValueError(f"no method table for stage {self.stage}")
        if not self.method_name:
            raise ValueError("method_name must be non-empty")


@dataclass(frozen=True)
class Detection:
    """One tracked bounding box: TLWH in pixels plus tracker confidence."""

    frame_idx: int
    track_id: int
    bbox: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self) -> None:
        if self.frame_idx < 0 or self.track_id < 0:
            raise ValueError("frame_idx and track_id must be >= 0")
        if len(self.bbox) != 4:
            raise ValueError("bbox must have four entries")
        if self.bbox[2] < 0 or self.bbox[3] < 0:
            raise ValueError("bbox width and height must be >= 0")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class TrackletSet:
    """Per-frame multi-person detections; ``per_frame[i]`` lists frame i."""

    per_frame: tuple[tuple[Detection, ...], ...]
    num_tracks: int

    def __post_init__(self) -> None:
        ids = set()
        for idx, dets in enumerate(self.per_frame):
            for det in dets:
                if det.frame_idx != idx:
                    raise ValueError(
                        f"detection frame_idx {det.frame_idx} stored at frame {idx}"
                    )
                ids.add(det.track_id)
        if self.num_tracks != len(ids):
            raise ValueError("num_tracks must equal the count of distinct track ids")

    @classmethod
    def from_frames(cls, per_frame: Sequence[Sequence[Detection]]) -> "TrackletSet":
        frames = tuple(tuple(dets) for dets in per_frame)
        ids = {det.track_id for dets in frames for det in dets}
        return cls(per_frame=frames, num_tracks=len(ids))

    @property
    def frame_count(self) -> int:
        return len(self.per_frame)

    def track_ids(self) -> set[int]:
        return {det.track_id for dets in self.per_frame for det in dets}

    def frames_of(self, track_id: int) -> list[int]:
        return [
            idx
            for idx, dets in enumerate(self.per_frame)
            if any(det.track_id == track_id for det in dets)
        ]

    def to_payload(self) -> dict:
        return {
            "num_tracks": self.num_tracks,
            "tracks": [
                [
                    {
                        "track_id": det.track_id,
                        "bbox": [float(v) for v in det.bbox],
                        "confidence": float(det.confidence),
                    }
                    for det in dets
                ]
                for dets in self.per_frame
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TrackletSet":
        frames = []
        for idx, dets in enumerate(payload["tracks"]):
            frames.append(
                tuple(
                    Detection(
                        frame_idx=idx,
                        track_id=int(d["track_id"]),
                        bbox=tuple(float(v) for v in d["bbox"]),
                        confidence=float(d["confidence"]),
                    )
                    for d in dets
                )
            )
        ts = cls(per_frame=tuple(frames), num_tracks=int(payload["num_tracks"]))
        return ts


INVALID_SUBJECT = -1


@dataclass(frozen=True)
class SubjectAnnotation:
    """A curation decision: which tracklets are the subject of interest.

    ``subject_id`` -1 marks the video invalid for downstream analysis and
    carries no selected tracklets.
    """

    video: VideoKey
    subject_id: int
    selected_track_ids: frozenset[int]
    annotator: str
    created_at: str

    def __post_init__(self) -> None:
        if self.subject_id < INVALID_SUBJECT:
            raise ValueError("subject_id must be >= -1")
        if self.subject_id == INVALID_SUBJECT and self.selected_track_ids:
            raise ValueError("invalid-subject annotations select no tracklets")
        if self.subject_id >= 0 and not self.selected_track_ids:
            raise ValueError("a valid subject must select at least one tracklet")


def _nan_row_mask(a: np.ndarray) -> np.ndarray:
    return np.isnan(a).all(axis=tuple(range(1, a.ndim)))


@dataclass(frozen=True)
class PersonBbox:
    """Single-subject TLWH track; absent frames are all-NaN rows."""

    bboxes: np.ndarray  # frames x 4

    def __post_init__(self) -> None:
        b = np.asarray(self.bboxes, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 4:
            raise ValueError("bboxes must be frames x 4")
        nan = np.isnan(b)
        mixed = nan.any(axis=1) & ~nan.all(axis=1)
        if mixed.any():
            raise ValueError("a frame must be fully NaN or fully finite")
        object.__setattr__(self, "bboxes", b)

    @property
    def present(self) -> np.ndarray:
        return ~_nan_row_mask(self.bboxes)

    @property
    def frame_count(self) -> int:
        return int(self.bboxes.shape[0])


@dataclass(frozen=True)
class Keypoints2D:
    """frames x J x 3 array of (x px, y px, confidence)."""

    data: np.ndarray
    skeleton: SkeletonId

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError("keypoints must be frames x J x 3")
        conf = d[:, :, 2]
        finite = conf[np.isfinite(conf)]
        if finite.size and ((finite < 0) | (finite > 1)).any():
            raise ValueError("confidence entries must be in [0, 1] or NaN")
        object.__setattr__(self, "data", d)

    @property
    def frame_count(self) -> int:
        return int(self.data.shape[0])

    @property
    def joint_count(self) -> int:
        return int(self.data.shape[1])

    @property
    def missing_frames(self) -> np.ndarray:
        return _nan_row_mask(self.data)


@dataclass(frozen=True)
class Joints3D:
    """frames x J x 3 array of (x, y, z); lifting carries no confidence."""

    data: np.ndarray
    skeleton: SkeletonId

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError("joints must be frames x J x 3")
        object.__setattr__(self, "data", d)

    @property
    def frame_count(self) -> int:
        return int(self.data.shape[0])

    @property
    def missing_frames(self) -> np.ndarray:
        return _nan_row_mask(self.data)


@dataclass(frozen=True)
class WeakPerspective:
    """Scaled orthographic camera: u = s(x + tx), v = s(y + ty).

    Parameters may be scalars (constant) or per-frame arrays.
    """

    scale: np.ndarray
    tx: np.ndarray
    ty: np.ndarray

    def __post_init__(self) -> None:
        s = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        tx = np.atleast_1d(np.asarray(self.tx, dtype=np.float64))
        ty = np.atleast_1d(np.asarray(self.ty, dtype=np.float64))
        if (s <= 0).any():
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "ty", ty)

    def at_frame(self, idx: int) -> "WeakPerspective":
        def pick(a: np.ndarray) -> float:
            return float(a[0] if a.shape[0] == 1 else a[idx])

        return WeakPerspective(
            np.array([pick(self.scale)]),
            np.array([pick(self.tx)]),
            np.array([pick(self.ty)]),
        )

    def to_payload(self) -> dict:
        return {
            "kind": "weak",
            "scale": [float(v) for v in self.scale],
            "tx": [float(v) for v in self.tx],
            "ty": [float(v) for v in self.ty],
        }


@dataclass(frozen=True)
class FullPerspective:
    """Pinhole camera with a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if len(self.rotation) != 3 or len(self.translation) != 3:
            raise ValueError("rotation and translation must be 3-vectors")

    def to_payload(self) -> dict:
        return {
            "kind": "full",
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }


CameraModel = WeakPerspective | FullPerspective


def camera_from_payload(payload: dict) -> CameraModel:
    kind = payload.get("kind")
    if kind == "weak":
        return WeakPerspective(
            np.asarray(payload["scale"], dtype=np.float64),
            np.asarray(payload["tx"], dtype=np.float64),
            np.asarray(payload["ty"], dtype=np.float64),
        )
    if kind == "full":
        return FullPerspective(
            fx=float(payload["fx"]),
            fy=float(payload["fy"]),
            cx=float(payload["cx"]),
            cy=float(payload["cy"]),
            rotation=tuple(float(v) for v in payload["rotation"]),
            translation=tuple(float(v) for v in payload["translation"]),
        )
    raise ValueError(f"unknown camera kind {kind!r}")


@dataclass(frozen=True)
class BodyModelResult:
    """Body-model fit: 10 shape coefficients, per-joint rotation vectors,
    6 global DOF, plus model-space joints, their reprojection, and the
    camera used to reproject.

    Shape is stored per frame because some estimators vary it over time;
    consumers wanting a single body shape may average over frames."""

    model_type: BodyModelType
    shape: np.ndarray  # frames x 10
    pose: np.ndarray  # frames x K x 3 rotation vectors
    global_orient: np.ndarray  # frames x 3
    global_transl: np.ndarray  # frames x 3
    joints3d: np.ndarray  # frames x J x 3
    reproj2d: np.ndarray  # frames x J x 2
    camera: CameraModel

    def __post_init__(self) -> None:
        shape = np.asarray(self.shape, dtype=np.float64)
        pose = np.asarray(self.pose, dtype=np.float64)
        orient = np.asarray(self.global_orient, dtype=np.float64)
        transl = np.asarray(self.global_transl, dtype=np.float64)
        joints = np.asarray(self.joints3d, dtype=np.float64)
        reproj = np.asarray(self.reproj2d, dtype=np.float64)
        frames = shape.shape[0]
        if shape.ndim != 2 or shape.shape[1] != SMPL_SHAPE_DIM:
            raise ValueError(f"shape must be frames x {SMPL_SHAPE_DIM}")
        if pose.ndim != 3 or pose.shape[2] != 3:
            raise ValueError("pose must be frames x K x 3 rotation vectors")
        if self.model_type is BodyModelType.SMPL and pose.shape[1] != SMPL_POSE_JOINTS:
            raise ValueError(f"SMPL pose must have {SMPL_POSE_JOINTS} joints")
        for name, a, cols in (
            ("global_orient", orient, 3),
            ("global_transl", transl, 3),
        ):
            if a.shape != (frames, cols):
                raise ValueError(f"{name} must be frames x {cols}")
        if joints.ndim != 3 or joints.shape[0] != frames or joints.shape[2] != 3:
            raise ValueError("joints3d must be frames x J x 3")
        if reproj.shape != (frames, joints.shape[1], 2):
            raise ValueError("reproj2d must be frames x J x 2")
        for name, a in (
            ("shape", shape),
            ("pose", pose),
            ("global_orient", orient),
            ("global_transl", transl),
            ("joints3d", joints),
            ("reproj2d", reproj),
        ):
            object.__setattr__(self, name, a)

    @property
    def frame_count(self) -> int:
        return int(self.shape.shape[0])


@dataclass(frozen=True)
class Skeleton:
    id: SkeletonId
    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    face_indices: tuple[int, ...]
    left_mask: tuple[bool, ...]
    right_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        if len(self.left_mask) != n or len(self.right_mask) != n:
            raise ValueError("side masks must cover every joint")
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) references a missing joint")
        for i in self.face_indices:
            if not (0 <= i < n):
                raise ValueError(f"face index {i} references a missing joint")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def index_of(self, name: str) -> int:
        return self.joint_names.index(name)


def _make_skeleton(
    sid: SkeletonId,
    names: Sequence[str],
    edges: Sequence[tuple[int, int]],
    face: Sequence[int],
) -> Skeleton:
    left = tuple(n.startswith("left_") or n.startswith("l_") for n in names)
    right = tuple(n.startswith("right_") or n.startswith("r_") for n in names)
    return Skeleton(
        id=sid,
        joint_names=tuple(names),
        edges=tuple(edges),
        face_indices=tuple(face),
        left_mask=left,
        right_mask=right,
    )


_COCO17_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

_COCO17_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)

_WHOLEBODY_FEET = (
    "left_big_toe", "left_small_toe", "left_heel",
    "right_big_toe", "right_small_toe", "right_heel",
)

_SYNTH13_NAMES = (
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
)

_SYNTH13_EDGES = (
    (0, 1), (0, 2), (1, 2),
    (1, 3), (3, 5), (2, 4), (4, 6),
    (1, 7), (2, 8), (7, 8),
    (7, 9), (9, 11), (8, 10), (10, 12),
)


def _wholebody133() -> Skeleton:
    names = list(_COCO17_NAMES) + list(_WHOLEBODY_FEET)
    names += [f"face_{i}" for i in range(68)]
    names += [f"left_hand_{i}" for i in range(21)]
    names += [f"right_hand_{i}" for i in range(21)]
    edges = list(_COCO17_EDGES) + [(15, 17), (15, 18), (15, 19), (16, 20), (16, 21), (16, 22)]
    face = list(range(23, 23 + 68))
    return _make_skeleton(SkeletonId.WHOLEBODY133, names, edges, face)


SKELETONS: dict[SkeletonId, Skeleton] = {
    SkeletonId.COCO17: _make_skeleton(
        SkeletonId.COCO17, _COCO17_NAMES, _COCO17_EDGES, face=(0, 1, 2, 3, 4)
    ),
    SkeletonId.WHOLEBODY133: _wholebody133(),
    SkeletonId.SYNTHETIC13: _make_skeleton(
        SkeletonId.SYNTHETIC13, _SYNTH13_NAMES, _SYNTH13_EDGES, face=(0,)
    ),
}


def skeleton(sid: SkeletonId | str) -> Skeleton:
    return SKELETONS[SkeletonId(sid)]


#: Joint-index mappings (source index, target index) for remapping.
#: The first 17 whole-body joints are the COCO body joints in order.
SKELETON_MAPPINGS: dict[tuple[SkeletonId, SkeletonId], tuple[tuple[int, int], ...]] = {
    (SkeletonId.WHOLEBODY133, SkeletonId.COCO17): tuple((i, i) for i in range(17)),
    (SkeletonId.COCO17, SkeletonId.WHOLEBODY133): tuple((i, i) for i in range(17)),
}
for _sid in SkeletonId:
    SKELETON_MAPPINGS[(_sid, _sid)] = tuple(
        (i, i) for i in range(SKELETONS[_sid].joint_count)
    )
