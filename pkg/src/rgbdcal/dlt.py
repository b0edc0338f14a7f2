"""Initial pose estimation from 2D/3D correspondences via DLT resectioning.

``estimate_pose_dlt`` recovers one camera's pose from >= 6 world/image
correspondences by solving the homogeneous linear system for the 3x4
projection matrix (Hartley-normalized), then factoring out the known
intrinsics and projecting onto a rigid transform.

``initialize_all`` seeds a full rig: camera 1 defines the world frame, and
every other camera is resectioned against camera 1's 3D measurements of the
shared 2D features.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateConfiguration, InsufficientPoints, MissingCorrespondence
from .geometry import Intrinsics, Pose, invert
from .scene import Dataset

_RANK_RTOL = 1e-8


def _normalize_2d(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity T mapping points to zero centroid and mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / dist if dist > 0 else 1.0
    T = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    normalized = (points - centroid) * scale
    return normalized, T


def _normalize_3d(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity U mapping points to zero centroid and mean distance sqrt(3)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    scale = np.sqrt(3.0) / dist if dist > 0 else 1.0
    U = np.eye(4)
    U[:3, :3] *= scale
    U[:3, 3] = -scale * centroid
    normalized = (points - centroid) * scale
    return normalized, U


def estimate_pose_dlt(world_points: np.ndarray, image_points: np.ndarray, k: Intrinsics) -> Pose:
    """Camera-to-world pose from 2D/3D correspondences.

    Raises :class:`InsufficientPoints` for fewer than 6 correspondences and
    :class:`DegenerateConfiguration` when the design matrix is rank-deficient
    (e.g. coplanar points).
    """
    world_points = np.asarray(world_points, dtype=float).reshape(-1, 3)
    image_points = np.asarray(image_points, dtype=float).reshape(-1, 2)
    n = len(world_points)
    if n < 6:
        raise InsufficientPoints(f"DLT needs >= 6 correspondences, got {n}")
    if len(image_points) != n:
        raise ValueError("point lists must have equal length")

    xn, T = _normalize_2d(image_points)
    Xn, U = _normalize_3d(world_points)
    Xh = np.hstack([Xn, np.ones((n, 1))])

    # rows for u: [X 0 -uX], rows for v: [0 X -vX]
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh

    _, sv, Vt = np.linalg.svd(A)
    if sv[10] < _RANK_RTOL * sv[0]:
        raise DegenerateConfiguration(
            "DLT design matrix is rank-deficient (coplanar or otherwise degenerate points)"
        )
    P = np.linalg.inv(T) @ Vt[-1].reshape(3, 4) @ U

    K = np.array([[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]])
    Rt = np.linalg.inv(K) @ P

    # Fix the projective sign so depths come out positive, then normalize the
    # scale so the rotation block has unit determinant.
    depths = world_points @ Rt[2, :3] + Rt[2, 3]
    if depths.mean() < 0.0:
        Rt = -Rt
    det = np.linalg.det(Rt[:, :3])
    Rt = Rt / np.cbrt(det)

    Um, _, Vmt = np.linalg.svd(Rt[:, :3])
    R = Um @ Vmt
    if np.linalg.det(R) < 0.0:
        R = Um @ np.diag([1.0, 1.0, -1.0]) @ Vmt
    return invert(Pose(R, Rt[:, 3]))


def initialize_all(d: Dataset) -> list[Pose]:
    """DLT pose estimates for every camera; camera 1 is the identity gauge.

    For camera l >= 2, the world points are camera 1's 3D measurements of the
    2D features (world frame = camera 1 frame) and the image points are
    camera l's pixel features.
    """
    if d.obs2d_xyz is None:
        raise MissingCorrespondence("dataset carries no 3D measurements for its 2D features")
    anchor = d.obs2d_xyz[0]
    bad = ~np.all(np.isfinite(anchor), axis=1)
    if np.any(bad):
        raise MissingCorrespondence(
            f"2D feature ids {d.ids2d[bad].tolist()} lack camera-1 3D measurements"
        )
    poses = [Pose.identity()]
    for l in range(1, d.num_cameras):
        poses.append(estimate_pose_dlt(anchor, d.obs2d[l], d.cameras[l].intrinsics))
    return poses
