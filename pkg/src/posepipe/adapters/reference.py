"""In-process reference adapters that read the synthetic scenes' color
coding exactly.  They are bit-deterministic given the frames, carry no
learned weights, and exist so the whole pipeline is verifiable without
any neural network.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..datamodel import Detection, FullPerspective, Skeleton, SkeletonId, TrackletSet
from ..synthscene import JOINT_COUNT, MARKER_CODE_BASE, marker_code

_IDENTITY_MIN_RED = MARKER_CODE_BASE  # identity reds start where marker codes do


def _components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components of a boolean mask as (N, 2) row/col arrays."""
    rows, cols = np.nonzero(mask)
    remaining = {(int(r), int(c)) for r, c in zip(rows, cols)}
    comps = []
    while remaining:
        seed = min(remaining)
        remaining.discard(seed)
        stack = [seed]
        members = [seed]
        while stack:
            r, c = stack.pop()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    nb = (r + dr, c + dc)
                    if nb in remaining:
                        remaining.discard(nb)
                        stack.append(nb)
                        members.append(nb)
        comps.append(np.array(members))
    return comps


def _weighted_centroid(frame: np.ndarray, members: np.ndarray) -> Optional[np.ndarray]:
    """Sub-pixel position from the blue-channel bilinear weights."""
    weights = frame[members[:, 0], members[:, 1], 2].astype(np.float64)
    total = weights.sum()
    if total <= 0:
        return None
    centers = members[:, ::-1].astype(np.float64) + 0.5  # (col, row) -> (x, y)
    return (weights[:, None] * centers).sum(axis=0) / total


class ColorTracker:
    """Groups identity-colored pixels into tracklets; a detection gap
    starts a fresh tracklet, mirroring how real trackers split."""

    def track(self, frames: np.ndarray) -> TrackletSet:
        per_frame: list[list[Detection]] = []
        next_id = 0
        last_seen: dict[int, tuple[int, int]] = {}  # red -> (track_id, frame)
        for f in range(frames.shape[0]):
            red_channel = frames[f, :, :, 0]
            dets: list[Detection] = []
            for red in sorted(int(v) for v in np.unique(red_channel)):
                if red < _IDENTITY_MIN_RED:
                    continue
                rows, cols = np.nonzero(red_channel == red)
                bbox = (
                    float(cols.min()),
                    float(rows.min()),
                    float(cols.max() - cols.min() + 1),
                    float(rows.max() - rows.min() + 1),
                )
                if red in last_seen and last_seen[red][1] == f - 1:
                    track_id = last_seen[red][0]
                else:
                    track_id = next_id
                    next_id += 1
                last_seen[red] = (track_id, f)
                dets.append(
                    Detection(frame_idx=f, track_id=track_id, bbox=bbox, confidence=1.0)
                )
            per_frame.append(dets)
        return TrackletSet.from_frames(per_frame)


class DiskKeypointDetector:
    """Reads the per-joint sub-pixel markers inside a person crop."""

    supported_skeleton = SkeletonId.SYNTHETIC13

    def detect(
        self, crop: np.ndarray, origin: tuple[int, int], skel: Skeleton
    ) -> np.ndarray:
        if skel.id != self.supported_skeleton:
            raise ValueError(f"reference detector only emits {self.supported_skeleton}")
        out = np.full((skel.joint_count, 3), np.nan)
        center = np.array([crop.shape[1] / 2.0, crop.shape[0] / 2.0])
        for j in range(JOINT_COUNT):
            mask = crop[:, :, 1] == marker_code(j)
            if not mask.any():
                continue
            best = None
            best_dist = np.inf
            for members in _components(mask):
                pos = _weighted_centroid(crop, members)
                if pos is None:
                    continue
                dist = float(np.linalg.norm(pos - center))
                if dist < best_dist:
                    best = pos
                    best_dist = dist
            if best is not None:
                out[j] = (best[0] + origin[0], best[1] + origin[1], 1.0)
        return out


class BackprojectLifter:
    """Camera-aware lifting: rays through the detected pixels intersected
    with the actor's known depth plane.  Assumes identity camera extrinsics;
    confidences are transmitted but ignored."""

    def __init__(self, fx: float, fy: float, cx: float, cy: float, depth: float):
        self.fx = fx
        self.fy = fy
        self.cx = cx
        self.cy = cy
        self.depth = depth

    def lift(self, windows: np.ndarray) -> np.ndarray:
        center = windows[:, windows.shape[1] // 2, :, :]
        u = center[:, :, 0]
        v = center[:, :, 1]
        x = (u - self.cx) * self.depth / self.fx
        y = (v - self.cy) * self.depth / self.fy
        z = np.where(np.isnan(u), np.nan, self.depth)
        return np.stack([x, y, z], axis=2)


class RigidBodyFitter:
    """Rigid stand-in for a body-model regressor: detects the marker
    joints, back-projects them, and reports zero articulation."""

    model_type = "smpl"
    pose_joints = 23

    def __init__(self, camera: dict, depth: float):
        self.camera = FullPerspective(
            fx=float(camera["fx"]),
            fy=float(camera["fy"]),
            cx=float(camera["cx"]),
            cy=float(camera["cy"]),
            rotation=tuple(camera.get("rotation", (0.0, 0.0, 0.0))),
            translation=tuple(camera.get("translation", (0.0, 0.0, 0.0))),
        )
        self.depth = depth
        self._detector = DiskKeypointDetector()

    def fit(self, crops) -> dict:
        from ..datamodel import skeleton

        skel = skeleton(SkeletonId.SYNTHETIC13)
        frames = len(crops)
        keypoints = np.full((frames, skel.joint_count, 3), np.nan)
        for f, item in enumerate(crops):
            if item is None:
                continue
            crop, origin = item
            keypoints[f] = self._detector.detect(crop, origin, skel)
        u = keypoints[:, :, 0]
        v = keypoints[:, :, 1]
        joints3d = np.stack(
            [
                (u - self.camera.cx) * self.depth / self.camera.fx,
                (v - self.camera.cy) * self.depth / self.camera.fy,
                np.where(np.isnan(u), np.nan, self.depth),
            ],
            axis=2,
        )
        missing = np.isnan(joints3d).all(axis=(1, 2))
        pose = np.zeros((frames, self.pose_joints, 3))
        pose[missing] = np.nan
        orient = np.zeros((frames, 3))
        orient[missing] = np.nan
        pelvis = joints3d[
            :, [skel.index_of("l_hip"), skel.index_of("r_hip")], :
        ].mean(axis=1)
        return {
            "model_type": self.model_type,
            "pose_format": "rotvec",
            "shape": np.zeros((frames, 10)),
            "pose": pose,
            "global_orient": orient,
            "global_transl": pelvis,
            "joints3d": joints3d,
            "camera": self.camera,
        }


class FaceDetector:
    """Bottom-up face finder: every head marker cluster becomes one face
    with five keypoints around its center."""

    _OFFSETS = np.array([(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)])

    def detect(self, frames: np.ndarray) -> list[list[np.ndarray]]:
        out: list[list[np.ndarray]] = []
        for f in range(frames.shape[0]):
            frame = frames[f]
            mask = frame[:, :, 1] == marker_code(0)
            faces = []
            for members in _components(mask):
                pos = _weighted_centroid(frame, members)
                if pos is not None:
                    faces.append(pos[None, :] + self._OFFSETS)
            faces.sort(key=lambda face: (face[0, 0], face[0, 1]))
            out.append(faces)
        return out
