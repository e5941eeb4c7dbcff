"""Deterministic synthetic scenes: articulated 13-joint stick figures
with full ground truth, plus the PPRV lossless raw-video container.

Scenes render each joint as a small identity-colored disk whose red and
green channels encode the actor and a 2x2 center block whose blue
channel carries bilinear sub-pixel weights.  Reference adapters read
those channels back, which makes adapter tests about pipeline plumbing
rather than vision.

Projection here is written independently of the geometry module on
purpose: tests cross-check the two closed forms against each other.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datamodel import FullPerspective, SkeletonId
from .errors import CorruptFile, SpecInvalid
from .metastore import VideoMeta

DISK_RADIUS = 1.6
DISK_BLUE = 16
MARKER_CODE_BASE = 32
MARKER_CODE_STEP = 16
JOINT_COUNT = 13

#: (x, y) offsets from the mid-hip point in units of actor height; y is down.
#: Spacing keeps every pair of sub-pixel marker blocks disjoint at the
#: demo scale even at the extremes of the gait swing.
_JOINT_OFFSETS = np.array(
    [
        (0.00, -0.55),   # head
        (-0.17, -0.42),  # l_shoulder
        (0.17, -0.42),   # r_shoulder
        (-0.24, -0.22),  # l_elbow
        (0.24, -0.22),   # r_elbow
        (-0.30, -0.02),  # l_wrist
        (0.30, -0.02),   # r_wrist
        (-0.08, 0.00),   # l_hip
        (0.08, 0.00),    # r_hip
        (-0.12, 0.22),   # l_knee
        (0.12, 0.22),    # r_knee
        (-0.13, 0.43),   # l_ankle
        (0.13, 0.43),    # r_ankle
    ]
)

#: Horizontal gait swing per joint, in units of the gait amplitude.
_SWING = np.array(
    [0.0, 0.0, 0.0, 0.5, -0.5, 1.0, -1.0, 0.0, 0.0, -0.3, 0.3, -0.6, 0.6]
)


def marker_code(joint: int) -> int:
    return MARKER_CODE_BASE + MARKER_CODE_STEP * joint


@dataclass(frozen=True)
class ActorSpec:
    identity_color: tuple[int, int, int]
    base: tuple[float, float]  # world x, y of the mid-hip point
    gait_amplitude: float  # world units
    gait_frequency: float  # Hz
    depth: float  # world units along the optical axis
    height: float = 1.7  # world units head-to-ankle scale


@dataclass(frozen=True)
class OcclusionEvent:
    actor: int
    start: int  # first hidden frame
    stop: int  # one past the last hidden frame


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int
    height: int
    fps: float
    frame_count: int
    actors: tuple[ActorSpec, ...]
    camera: FullPerspective
    occlusion_events: tuple[OcclusionEvent, ...] = ()


@dataclass(frozen=True)
class GroundTruth:
    """Per-actor truth: world joints, their projection, tight bboxes,
    and visibility honoring the occlusion schedule."""

    joints3d: np.ndarray  # actors x frames x 13 x 3, world units
    joints2d: np.ndarray  # actors x frames x 13 x 2, pixels
    bboxes: np.ndarray  # actors x frames x 4 TLWH, NaN when hidden
    visible: np.ndarray  # actors x frames bool
    marker_readable: np.ndarray  # actors x frames x 13 bool
    camera: FullPerspective
    fps: float
    identity_colors: tuple[tuple[int, int, int], ...]

    @property
    def skeleton_id(self) -> SkeletonId:
        return SkeletonId.SYNTHETIC13


def _validate(spec: SceneSpec) -> None:
    if spec.width <= 0 or spec.height <= 0 or spec.frame_count <= 0:
        raise SpecInvalid("frame geometry must be positive")
    if spec.fps <= 0:
        raise SpecInvalid("fps must be positive")
    reds = set()
    for actor in spec.actors:
        r, g, b = actor.identity_color
        if not all(0 <= c <= 255 for c in (r, g, b)):
            raise SpecInvalid("identity color channels must be bytes")
        if r < MARKER_CODE_BASE:
            raise SpecInvalid("identity red channel must be >= 32")
        if g >= MARKER_CODE_BASE:
            raise SpecInvalid("identity green channel must be < 32")
        if r in reds:
            raise SpecInvalid("identity colors must be distinct per actor")
        reds.add(r)
        if actor.depth <= 0:
            raise SpecInvalid("actor depth must be positive")
        if actor.gait_frequency >= spec.fps / 2:
            raise SpecInvalid("gait frequency must be below the Nyquist rate")
    colors = {a.identity_color for a in spec.actors}
    if len(colors) != len(spec.actors):
        raise SpecInvalid("identity colors must be distinct per actor")
    for event in spec.occlusion_events:
        if not (0 <= event.actor < len(spec.actors)):
            raise SpecInvalid(f"occlusion event references actor {event.actor}")
        if not (0 <= event.start <= event.stop <= spec.frame_count):
            raise SpecInvalid("occlusion frame range out of bounds")


def _rodrigues(rotvec: Sequence[float]) -> np.ndarray:
    # local on purpose: this module's projection must not share code with
    # the geometry module it is used to cross-check
    r = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(r))
    if angle < 1e-12:
        return np.eye(3)
    k = r / angle
    kx, ky, kz = k
    skew = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * skew + (1 - np.cos(angle)) * (skew @ skew)


def project_truth(camera: FullPerspective, points: np.ndarray) -> np.ndarray:
    """Closed-form pinhole projection of ... x 3 world points to pixels."""
    pts = np.asarray(points, dtype=np.float64)
    rot = _rodrigues(camera.rotation)
    cam = pts @ rot.T + np.asarray(camera.translation)
    u = camera.fx * cam[..., 0] / cam[..., 2] + camera.cx
    v = camera.fy * cam[..., 1] / cam[..., 2] + camera.cy
    return np.stack([u, v], axis=-1)


def _world_joints(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    actors = len(spec.actors)
    frames = spec.frame_count
    joints = np.zeros((actors, frames, JOINT_COUNT, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=actors)
    t = np.arange(frames) / spec.fps
    for a, actor in enumerate(spec.actors):
        phi = 2.0 * np.pi * actor.gait_frequency * t + phases[a]
        x = (
            actor.base[0]
            + _JOINT_OFFSETS[:, 0][None, :] * actor.height
            + actor.gait_amplitude * np.sin(phi)[:, None] * _SWING[None, :]
        )
        bob = 0.03 * actor.gait_amplitude * np.sin(2.0 * phi)
        y = actor.base[1] + _JOINT_OFFSETS[:, 1][None, :] * actor.height + bob[:, None]
        joints[a, :, :, 0] = x
        joints[a, :, :, 1] = y
        joints[a, :, :, 2] = actor.depth
    return joints


def _hidden_mask(spec: SceneSpec) -> np.ndarray:
    hidden = np.zeros((len(spec.actors), spec.frame_count), dtype=bool)
    for event in spec.occlusion_events:
        hidden[event.actor, event.start : event.stop] = True
    return hidden


def _draw_disk(frame: np.ndarray, x: float, y: float, color: tuple[int, int, int]) -> None:
    h, w = frame.shape[:2]
    c0 = max(0, int(np.floor(x - DISK_RADIUS)))
    c1 = min(w, int(np.ceil(x + DISK_RADIUS)) + 1)
    r0 = max(0, int(np.floor(y - DISK_RADIUS)))
    r1 = min(h, int(np.ceil(y + DISK_RADIUS)) + 1)
    if c0 >= c1 or r0 >= r1:
        return
    cols = np.arange(c0, c1) + 0.5
    rows = np.arange(r0, r1) + 0.5
    mask = (cols[None, :] - x) ** 2 + (rows[:, None] - y) ** 2 <= DISK_RADIUS**2
    frame[r0:r1, c0:c1][mask] = color


def _draw_marker(
    frame: np.ndarray, x: float, y: float, red: int, joint: int
) -> None:
    h, w = frame.shape[:2]
    i = int(np.floor(x - 0.5))
    k = int(np.floor(y - 0.5))
    fx = x - 0.5 - i
    fy = y - 0.5 - k
    weights = (
        ((i, k), (1 - fx) * (1 - fy)),
        ((i + 1, k), fx * (1 - fy)),
        ((i, k + 1), (1 - fx) * fy),
        ((i + 1, k + 1), fx * fy),
    )
    for (col, row), weight in weights:
        if 0 <= col < w and 0 <= row < h:
            frame[row, col] = (red, marker_code(joint), int(round(255 * weight)))


def marker_block_in_frame(x: float, y: float, width: int, height: int) -> bool:
    i = int(np.floor(x - 0.5))
    k = int(np.floor(y - 0.5))
    return 0 <= i and i + 1 < width and 0 <= k and k + 1 < height


def generate(spec: SceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """Render the scene; deterministic in the SceneSpec alone."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    joints3d = _world_joints(spec, rng)
    joints2d = project_truth(spec.camera, joints3d)
    hidden = _hidden_mask(spec)
    actors = len(spec.actors)
    frames = np.zeros((spec.frame_count, spec.height, spec.width, 3), dtype=np.uint8)

    bboxes = np.full((actors, spec.frame_count, 4), np.nan)
    visible = np.zeros((actors, spec.frame_count), dtype=bool)
    readable = np.zeros((actors, spec.frame_count, JOINT_COUNT), dtype=bool)

    # far actors first so nearer ones paint over them
    order = sorted(range(actors), key=lambda a: -spec.actors[a].depth)
    for f in range(spec.frame_count):
        frame = frames[f]
        for a in order:
            if hidden[a, f]:
                continue
            pts = joints2d[a, f]
            x0 = max(0.0, float(pts[:, 0].min() - DISK_RADIUS))
            x1 = min(float(spec.width), float(pts[:, 0].max() + DISK_RADIUS))
            y0 = max(0.0, float(pts[:, 1].min() - DISK_RADIUS))
            y1 = min(float(spec.height), float(pts[:, 1].max() + DISK_RADIUS))
            if x1 <= x0 or y1 <= y0:
                continue
            visible[a, f] = True
            bboxes[a, f] = (x0, y0, x1 - x0, y1 - y0)
            red, green, _ = spec.actors[a].identity_color
            for j in range(JOINT_COUNT):
                _draw_disk(frame, pts[j, 0], pts[j, 1], (red, green, DISK_BLUE))
            for j in range(JOINT_COUNT):
                _draw_marker(frame, pts[j, 0], pts[j, 1], red, j)
                readable[a, f, j] = marker_block_in_frame(
                    pts[j, 0], pts[j, 1], spec.width, spec.height
                )

    truth = GroundTruth(
        joints3d=joints3d,
        joints2d=joints2d,
        bboxes=bboxes,
        visible=visible,
        marker_readable=readable,
        camera=spec.camera,
        fps=spec.fps,
        identity_colors=tuple(a.identity_color for a in spec.actors),
    )
    return frames, truth


# -- PPRV container -----------------------------------------------------------

_PPRV_MAGIC = b"PPRV"
_PPRV_VERSION = 1
_PPRV_HEADER = struct.Struct("<4sIIIdI")  # magic, version, w, h, fps, n


def rawvideo_bytes(frames: np.ndarray, fps: float) -> bytes:
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError("frames must be F x H x W x 3 uint8")
    n, h, w, _ = frames.shape
    header = _PPRV_HEADER.pack(_PPRV_MAGIC, _PPRV_VERSION, w, h, float(fps), n)
    return header + frames.tobytes()


def write_rawvideo(frames: np.ndarray, path: str | Path, fps: float = 30.0) -> Path:
    path = Path(path)
    path.write_bytes(rawvideo_bytes(frames, fps))
    return path


def parse_rawvideo(data: bytes) -> tuple[np.ndarray, VideoMeta]:
    if len(data) < _PPRV_HEADER.size:
        raise CorruptFile("raw video shorter than its header")
    magic, version, w, h, fps, n = _PPRV_HEADER.unpack_from(data, 0)
    if magic != _PPRV_MAGIC:
        raise CorruptFile("bad raw video magic")
    if version != _PPRV_VERSION:
        raise CorruptFile(f"unsupported raw video version {version}")
    expected = _PPRV_HEADER.size + n * h * w * 3
    if len(data) != expected:
        raise CorruptFile(
            f"raw video payload is {len(data)} bytes, expected {expected}"
        )
    frames = (
        np.frombuffer(data, dtype=np.uint8, offset=_PPRV_HEADER.size)
        .reshape(n, h, w, 3)
        .copy()
    )
    return frames, VideoMeta(width=w, height=h, fps=fps, frame_count=n)


def read_rawvideo(path: str | Path) -> tuple[np.ndarray, VideoMeta]:
    return parse_rawvideo(Path(path).read_bytes())


def probe_rawvideo(path: str | Path) -> VideoMeta:
    with open(path, "rb") as fh:
        head = fh.read(_PPRV_HEADER.size)
        if len(head) < _PPRV_HEADER.size:
            raise CorruptFile("raw video shorter than its header")
        magic, version, w, h, fps, n = _PPRV_HEADER.unpack(head)
        if magic != _PPRV_MAGIC:
            raise CorruptFile("bad raw video magic")
        if version != _PPRV_VERSION:
            raise CorruptFile(f"unsupported raw video version {version}")
        fh.seek(0, 2)
        size = fh.tell()
    expected = _PPRV_HEADER.size + n * h * w * 3
    if size != expected:
        raise CorruptFile(f"raw video payload is {size} bytes, expected {expected}")
    return VideoMeta(width=w, height=h, fps=fps, frame_count=n)


class PPRVSource:
    """FrameSource over the PPRV container; the tool-free default."""

    def probe(self, path: str | Path) -> VideoMeta:
        return probe_rawvideo(path)

    def read(self, path: str | Path) -> np.ndarray:
        frames, _ = read_rawvideo(path)
        return frames


# -- canned scenes -------------------------------------------------------------

_PALETTE = ((64, 0, 0), (112, 8, 0), (160, 16, 0), (208, 24, 0))


def demo_camera(width: int = 64, height: int = 48) -> FullPerspective:
    return FullPerspective(fx=45.0, fy=45.0, cx=width / 2.0, cy=height / 2.0)


def make_demo_scene(
    seed: int,
    num_actors: int = 2,
    frame_count: int = 300,
    width: int = 64,
    height: int = 48,
    fps: float = 30.0,
    gait_frequency: float = 1.25,
    occlusion: Optional[OcclusionEvent] = None,
) -> SceneSpec:
    """Side-by-side actors sized so figures never overlap in image space."""
    if not (1 <= num_actors <= len(_PALETTE)):
        raise SpecInvalid(f"demo scenes support 1..{len(_PALETTE)} actors")
    camera = demo_camera(width, height)
    depth = 4.0
    centers_px = np.linspace(width * 0.2, width * 0.8, num_actors)
    if num_actors == 1:
        centers_px = np.array([width / 2.0])
    actors = []
    for i, cx_px in enumerate(centers_px):
        x_world = (cx_px - camera.cx) * depth / camera.fx
        y_world = (height * 0.55 - camera.cy) * depth / camera.fy
        actors.append(
            ActorSpec(
                identity_color=_PALETTE[i],
                base=(float(x_world), float(y_world)),
                gait_amplitude=0.15,
                gait_frequency=gait_frequency,
                depth=depth,
            )
        )
    return SceneSpec(
        seed=seed,
        width=width,
        height=height,
        fps=fps,
        frame_count=frame_count,
        actors=tuple(actors),
        camera=camera,
        occlusion_events=(occlusion,) if occlusion else (),
    )
