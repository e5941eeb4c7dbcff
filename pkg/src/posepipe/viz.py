"""Privacy-preserving rendering: opaque face covers, callback overlays,
tracklet and keypoint drawing, and the external-encoder sink.

Faces are covered with opaque filled circles rather than blurred, which
is a stronger guarantee and trivially auditable.  Overlays are drawn on
the blurred video, never the raw one.
"""

from __future__ import annotations

import subprocess
import tempfile
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datamodel import Keypoints2D, Skeleton, TrackletSet
from .errors import EncoderFailed
from .metastore import BlobRef, BlobStore
from .synthscene import rawvideo_bytes

FACE_FILL = (72, 72, 72)
MIN_FACE_RADIUS = 8.0
FACE_RADIUS_FACTOR = 1.5

LEFT_COLOR = (220, 40, 40)  # left side is red
RIGHT_COLOR = (50, 80, 230)  # right side is blue
CENTER_COLOR = (230, 230, 230)

_TRACK_PALETTE = (
    (255, 196, 0),
    (0, 200, 120),
    (90, 140, 255),
    (255, 90, 160),
    (170, 220, 60),
    (0, 220, 220),
    (255, 140, 60),
    (200, 120, 255),
)

_DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
    "-": ("000", "000", "111", "000", "000"),
}


def face_circle(face: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Cover rule: center at the finite-keypoint centroid, radius 1.5x the
    largest centroid distance, at least 8 px.  None if nothing is finite."""
    pts = np.asarray(face, dtype=np.float64).reshape(-1, 2)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.any():
        return None
    pts = pts[finite]
    center = pts.mean(axis=0)
    spread = float(np.linalg.norm(pts - center, axis=1).max())
    return center, max(MIN_FACE_RADIUS, FACE_RADIUS_FACTOR * spread)


def fill_circle(frame: np.ndarray, center, radius: float, color) -> None:
    h, w = frame.shape[:2]
    cx, cy = float(center[0]), float(center[1])
    c0 = max(0, int(np.floor(cx - radius)))
    c1 = min(w, int(np.ceil(cx + radius)) + 1)
    r0 = max(0, int(np.floor(cy - radius)))
    r1 = min(h, int(np.ceil(cy + radius)) + 1)
    if c0 >= c1 or r0 >= r1:
        return
    cols = np.arange(c0, c1) + 0.5
    rows = np.arange(r0, r1) + 0.5
    mask = (cols[None, :] - cx) ** 2 + (rows[:, None] - cy) ** 2 <= radius**2
    frame[r0:r1, c0:c1][mask] = color


def blur_faces(
    frames: np.ndarray, faces: Sequence[Sequence[np.ndarray]]
) -> np.ndarray:
    """Opaque circle over every detected face; frames without faces pass
    through untouched."""
    out = np.array(frames, copy=True)
    for f in range(out.shape[0]):
        for face in faces[f] if f < len(faces) else ():
            circle = face_circle(face)
            if circle is not None:
                fill_circle(out[f], circle[0], circle[1], FACE_FILL)
    return out


def render_overlay(
    frames: np.ndarray, callback: Callable[[np.ndarray, int], np.ndarray]
) -> np.ndarray:
    """Apply the callback once per frame in index order.  Callbacks may
    draw in place or return a new frame of the same size."""
    out = []
    for idx in range(frames.shape[0]):
        frame = np.array(frames[idx], copy=True)
        result = callback(frame, idx)
        result = frame if result is None else np.asarray(result, dtype=np.uint8)
        if result.shape != frames.shape[1:]:
            raise ValueError(
                f"overlay changed frame {idx} shape to {result.shape}"
            )
        out.append(result)
    return np.stack(out) if out else np.array(frames, copy=True)


def draw_rect(frame: np.ndarray, bbox, color) -> None:
    h, w = frame.shape[:2]
    x, y, bw, bh = (float(v) for v in bbox)
    x0 = int(round(x))
    y0 = int(round(y))
    x1 = int(round(x + bw)) - 1
    y1 = int(round(y + bh)) - 1
    xs = slice(max(0, x0), min(w, x1 + 1))
    ys = slice(max(0, y0), min(h, y1 + 1))
    if 0 <= y0 < h:
        frame[y0, xs] = color
    if 0 <= y1 < h:
        frame[y1, xs] = color
    if 0 <= x0 < w:
        frame[ys, x0] = color
    if 0 <= x1 < w:
        frame[ys, x1] = color


def draw_line(frame: np.ndarray, p0, p1, color) -> None:
    h, w = frame.shape[:2]
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    steps = int(np.ceil(np.linalg.norm(p1 - p0))) * 2 + 1
    ts = np.linspace(0.0, 1.0, steps)
    pts = np.round(p0[None, :] + ts[:, None] * (p1 - p0)[None, :]).astype(int)
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    frame[pts[ok, 1], pts[ok, 0]] = color


def draw_label(frame: np.ndarray, x: int, y: int, text: str, color) -> None:
    h, w = frame.shape[:2]
    col = x
    for ch in text:
        glyph = _DIGITS.get(ch)
        if glyph is None:
            col += 4
            continue
        for dy, row in enumerate(glyph):
            for dx, bit in enumerate(row):
                if bit == "1" and 0 <= y + dy < h and 0 <= col + dx < w:
                    frame[y + dy, col + dx] = color
        col += 4


def track_color(track_id: int) -> tuple[int, int, int]:
    return _TRACK_PALETTE[track_id % len(_TRACK_PALETTE)]


def draw_tracklets(frames: np.ndarray, ts: TrackletSet) -> np.ndarray:
    """Rectangle plus track-id label per detection, one stable color per
    track."""

    def overlay(frame: np.ndarray, idx: int) -> np.ndarray:
        for det in ts.per_frame[idx] if idx < ts.frame_count else ():
            color = track_color(det.track_id)
            draw_rect(frame, det.bbox, color)
            draw_label(
                frame,
                int(round(det.bbox[0])),
                max(0, int(round(det.bbox[1])) - 6),
                str(det.track_id),
                color,
            )
        return frame

    return render_overlay(frames, overlay)


def _joint_color(skel: Skeleton, j: int) -> tuple[int, int, int]:
    if skel.left_mask[j]:
        return LEFT_COLOR
    if skel.right_mask[j]:
        return RIGHT_COLOR
    return CENTER_COLOR


def draw_keypoints(frames: np.ndarray, kp: Keypoints2D, skel: Skeleton) -> np.ndarray:
    """Skeleton edges and joint dots; NaN joints are skipped."""

    def overlay(frame: np.ndarray, idx: int) -> np.ndarray:
        pts = kp.data[idx, :, :2]
        for a, b in skel.edges:
            if np.isfinite(pts[a]).all() and np.isfinite(pts[b]).all():
                draw_line(frame, pts[a], pts[b], CENTER_COLOR)
        for j in range(skel.joint_count):
            if np.isfinite(pts[j]).all():
                fill_circle(frame, pts[j], 1.0, _joint_color(skel, j))
        return frame

    return render_overlay(frames, overlay)


def draw_points(frames: np.ndarray, points: np.ndarray, color=CENTER_COLOR) -> np.ndarray:
    """Plain dot overlay for frames x J x 2 points."""

    def overlay(frame: np.ndarray, idx: int) -> np.ndarray:
        for pt in points[idx]:
            if np.isfinite(pt).all():
                fill_circle(frame, pt, 1.0, color)
        return frame

    return render_overlay(frames, overlay)


def draw_skeleton3d_strip(
    joints3d: np.ndarray, skel: Skeleton, size: int = 96
) -> np.ndarray:
    """Camera-free orthographic panels of a 3D joint sequence (x right,
    y down), normalized over the whole clip so the figure stays put."""
    joints3d = np.asarray(joints3d, dtype=np.float64)
    frames = joints3d.shape[0]
    out = np.zeros((frames, size, size, 3), dtype=np.uint8)
    finite = joints3d[np.isfinite(joints3d).all(axis=2)]
    if finite.size == 0:
        return out
    lo = finite[:, :2].min(axis=0)
    hi = finite[:, :2].max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    margin = 6.0
    scale = (size - 2 * margin) / span

    def to_panel(p: np.ndarray) -> np.ndarray:
        return margin + (p[:2] - lo) * scale

    for f in range(frames):
        pts = joints3d[f]
        panel = out[f]
        for a, b in skel.edges:
            if np.isfinite(pts[a, :2]).all() and np.isfinite(pts[b, :2]).all():
                draw_line(panel, to_panel(pts[a]), to_panel(pts[b]), CENTER_COLOR)
        for j in range(skel.joint_count):
            if np.isfinite(pts[j, :2]).all():
                fill_circle(panel, to_panel(pts[j]), 1.5, _joint_color(skel, j))
    return out


def encode(
    frames: np.ndarray,
    blobs: BlobStore,
    fps: float,
    encoder_cmd: Sequence[str] | None = None,
) -> BlobRef:
    """Stream raw RGB24 to the encoder command's stdin and store its output
    file; with no encoder configured, store the frames as PPRV directly."""
    if encoder_cmd is None:
        return blobs.put_blob(rawvideo_bytes(frames, fps))
    frames = np.asarray(frames, dtype=np.uint8)
    count, height, width, _ = frames.shape
    with tempfile.TemporaryDirectory(prefix="posepipe-enc-") as tmp:
        out_path = Path(tmp) / "encoded.out"
        cmd = [
            arg.format(width=width, height=height, fps=fps, out=str(out_path))
            for arg in encoder_cmd
        ]
        proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stderr=subprocess.PIPE
        )
        try:
            _, stderr = proc.communicate(input=frames.tobytes(), timeout=300)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
            raise EncoderFailed("encoder timed out") from None
        if proc.returncode != 0:
            tail = stderr[-2000:].decode("utf-8", "replace")
            raise EncoderFailed(f"encoder exited {proc.returncode}: {tail}")
        if not out_path.exists():
            raise EncoderFailed("encoder exited 0 but produced no output file")
        return blobs.put_blob_file(out_path)
