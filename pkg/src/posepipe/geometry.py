"""Rotation-representation conversions, camera projection, and skeleton
remapping.

Conventions:

- Quaternions are w-first with the Hamilton product; q and -q encode the
  same rotation.
- Canonical rotation vectors have angle in [0, pi]; a tie at pi picks the
  axis whose first nonzero component is positive.
- Below an angle of 1e-8 rad the Rodrigues formula switches to its
  second-order series expansion.
"""

from __future__ import annotations

import numpy as np

from .datamodel import (
    CameraModel,
    FullPerspective,
    Joints3D,
    Keypoints2D,
    SKELETONS,
    SKELETON_MAPPINGS,
    SkeletonId,
    WeakPerspective,
)
from .errors import (
    BehindCamera,
    DegenerateInput,
    NoMapping,
    NonFinite,
    NotARotation,
    ZeroQuaternion,
)

SMALL_ANGLE = 1e-8
ORTHONORMAL_TOL = 1e-3


def _canonical_rotvec(r: np.ndarray) -> np.ndarray:
    """Normalize angle to [0, pi]; resolve the pi ambiguity by sign."""
    angle = float(np.linalg.norm(r))
    if angle == 0.0:
        return r
    axis = r / angle
    wrapped = angle % (2.0 * np.pi)
    if wrapped > np.pi:
        wrapped = 2.0 * np.pi - wrapped
        axis = -axis
    r = axis * wrapped
    if abs(wrapped - np.pi) < 1e-12:
        for component in r:
            if component > 0:
                break
            if component < 0:
                r = -r
                break
    return r


def rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues: axis-angle vector to a 3x3 rotation matrix."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    if not np.isfinite(r).all():
        raise NonFinite("rotation vector has non-finite components")
    angle = float(np.linalg.norm(r))
    kx, ky, kz = r
    skew = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    if angle < SMALL_ANGLE:
        return np.eye(3) + skew + 0.5 * (skew @ skew)
    skew /= angle
    return (
        np.eye(3)
        + np.sin(angle) * skew
        + (1.0 - np.cos(angle)) * (skew @ skew)
    )


def _polar_orthonormalize(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues with polar re-orthonormalization first."""
    m = np.asarray(m, dtype=np.float64).reshape(3, 3)
    if not np.isfinite(m).all():
        raise NonFinite("matrix has non-finite entries")
    residual = max(
        float(np.abs(m @ m.T - np.eye(3)).max()), float(abs(np.linalg.det(m) - 1.0))
    )
    if residual > ORTHONORMAL_TOL:
        raise NotARotation(f"orthonormality residual {residual:.2e}")
    r = _polar_orthonormalize(m)
    # quaternion extraction is stable over the whole angle range
    q = _matrix_to_quat(r)
    return quat_to_rotvec(q)


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    t = float(np.trace(m))
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif i == 1:
            s = np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
    return np.array([w, x, y, z])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """w-first quaternion to canonical rotation vector."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if not np.isfinite(q).all():
        raise NonFinite("quaternion has non-finite components")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ZeroQuaternion("cannot normalize the zero quaternion")
    q = q / norm
    if q[0] < 0:
        q = -q
    w = min(q[0], 1.0)
    vec = q[1:]
    sin_half = float(np.linalg.norm(vec))
    angle = 2.0 * np.arctan2(sin_half, w)
    if sin_half < SMALL_ANGLE:
        # sin(x)/x ~ 1 - x^2/6 for the half angle
        return _canonical_rotvec(vec * (2.0 / max(w, SMALL_ANGLE)))
    return _canonical_rotvec(vec * (angle / sin_half))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    return rotvec_to_matrix(quat_to_rotvec(q))


def sixd_to_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gram-Schmidt two raw column vectors into a rotation matrix."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NonFinite("6D input has non-finite components")
    na = float(np.linalg.norm(a))
    if na < 1e-12:
        raise DegenerateInput("first 6D column is near zero")
    c1 = a / na
    b_perp = b - np.dot(c1, b) * c1
    nb = float(np.linalg.norm(b_perp))
    if nb < 1e-12:
        raise DegenerateInput("6D columns are parallel")
    c2 = b_perp / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def standardize_rotations(values: np.ndarray, fmt: str) -> np.ndarray:
    """Convert a batch of rotations in ``fmt`` to rotation vectors.

    Accepts trailing shapes (3,) rotvec, (4,) quaternion, (3, 3) matrix,
    or (6,) two-column 6D; leading axes are preserved.
    """
    values = np.asarray(values, dtype=np.float64)
    if fmt == "rotvec":
        if values.shape[-1] != 3:
            raise ValueError("rotvec batch must end in 3")
        flat = values.reshape(-1, 3)
        out = np.stack([_canonical_rotvec(v.copy()) for v in flat])
        return out.reshape(values.shape)
    if fmt == "quat":
        if values.shape[-1] != 4:
            raise ValueError("quaternion batch must end in 4")
        flat = values.reshape(-1, 4)
        out = np.stack([quat_to_rotvec(v) for v in flat])
        return out.reshape(values.shape[:-1] + (3,))
    if fmt == "matrix":
        if values.shape[-2:] != (3, 3):
            raise ValueError("matrix batch must end in 3x3")
        flat = values.reshape(-1, 3, 3)
        out = np.stack([matrix_to_rotvec(v) for v in flat])
        return out.reshape(values.shape[:-2] + (3,))
    if fmt == "sixd":
        if values.shape[-1] != 6:
            raise ValueError("6D batch must end in 6")
        flat = values.reshape(-1, 6)
        out = np.stack(
            [matrix_to_rotvec(sixd_to_matrix(v[:3], v[3:])) for v in flat]
        )
        return out.reshape(values.shape[:-1] + (3,))
    raise ValueError(f"unknown rotation format {fmt!r}")


def project(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    """Project N x 3 points to N x 2 pixel coordinates."""
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    points = np.atleast_2d(points)
    if points.shape[-1] != 3:
        raise ValueError("points must be N x 3")
    if isinstance(camera, WeakPerspective):
        if camera.scale.shape[0] != 1:
            raise ValueError("per-frame weak camera: project one frame at a time")
        s = float(camera.scale[0])
        tx = float(camera.tx[0])
        ty = float(camera.ty[0])
        out = np.stack(
            [s * (points[:, 0] + tx), s * (points[:, 1] + ty)], axis=1
        )
    elif isinstance(camera, FullPerspective):
        rot = rotvec_to_matrix(np.asarray(camera.rotation))
        cam_pts = points @ rot.T + np.asarray(camera.translation)
        z = cam_pts[:, 2]
        valid = np.isfinite(z)
        if (z[valid] <= 0).any():
            raise BehindCamera("a point has non-positive camera-frame depth")
        out = np.stack(
            [
                camera.fx * cam_pts[:, 0] / z + camera.cx,
                camera.fy * cam_pts[:, 1] / z + camera.cy,
            ],
            axis=1,
        )
    else:
        raise TypeError(f"unknown camera model {type(camera).__name__}")
    return out[0] if squeeze else out


def project_sequence(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    """Project frames x J x 3 points, honoring per-frame weak parameters."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3:
        raise ValueError("points must be frames x J x 3")
    if isinstance(camera, WeakPerspective) and camera.scale.shape[0] > 1:
        return np.stack(
            [project(camera.at_frame(i), points[i]) for i in range(points.shape[0])]
        )
    return np.stack([project(camera, frame) for frame in points])


def remap_skeleton(
    kp: Keypoints2D | Joints3D, source: SkeletonId, target: SkeletonId
) -> Keypoints2D | Joints3D:
    """Copy mapped joints into the target layout; unmapped joints are NaN."""
    mapping = SKELETON_MAPPINGS.get((SkeletonId(source), SkeletonId(target)))
    if mapping is None:
        raise NoMapping(f"no joint mapping from {source} to {target}")
    if kp.skeleton != SkeletonId(source):
        raise ValueError("keypoints are not in the declared source skeleton")
    frames = kp.data.shape[0]
    channels = kp.data.shape[2]
    target_skeleton = SKELETONS[SkeletonId(target)]
    out = np.full((frames, target_skeleton.joint_count, channels), np.nan)
    for src, dst in mapping:
        out[:, dst, :] = kp.data[:, src, :]
    if isinstance(kp, Keypoints2D):
        return Keypoints2D(data=out, skeleton=SkeletonId(target))
    return Joints3D(data=out, skeleton=SkeletonId(target))
