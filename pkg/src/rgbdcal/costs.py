"""Objective functions for pose refinement.

Four objectives are provided:

* ``ba_cost``      -- squared 2D reprojection error over all cameras/features.
* ``icp_cost``     -- squared 3D alignment error over camera pairs.
* ``joint_cost``   -- ``V_ICP + w * V_BA`` with weight ``w`` in mm^2/px^2.
* ``baicp_plus_cost`` -- count-normalized convex blend with a heuristic
  ``(avgDepth/avgFocal)^2`` scale, tunable by ``c`` in [0, 1].

The 3D cost sums over unordered camera pairs by default; each correspondence
then appears once, matching the likelihood derivation behind the joint
weight.  ``ordered_pairs=True`` sums ordered pairs instead, which exactly
doubles the 3D term (equivalent to halving ``w``).

Residual storage order is fixed for reproducible Jacobian layouts: cameras
(or camera pairs, lexicographically) outer, features inner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MissingCorrespondence, PointBehindCamera
from .geometry import Intrinsics, Pose, project, transform_point
from .scene import Dataset


@dataclass(frozen=True)
class NoiseModel:
    """Per-coordinate measurement noise variances."""

    sigma2d_sq: float  # pixels^2
    sigma3d_sq: float  # mm^2

    def __post_init__(self):
        if not self.sigma2d_sq > 0:
            raise ValueError("sigma2d_sq must be positive")
        if self.sigma3d_sq < 0:
            raise ValueError("sigma3d_sq must be non-negative")

    @property
    def weight(self) -> float:
        return weight_from_variances(self.sigma3d_sq, self.sigma2d_sq)


@dataclass
class ParameterBlock:
    """Optimization variables: poses of cameras 2..N plus world points.

    Camera 1 is the gauge and is pinned to the identity.  ``structure`` holds
    one world point per 2D feature, aligned with the dataset's ``ids2d``.
    """

    poses: list[Pose]          # cameras 2..N
    structure: np.ndarray      # (H, 3) world mm

    def __post_init__(self):
        self.structure = np.asarray(self.structure, dtype=float).reshape(-1, 3)

    @property
    def num_cameras(self) -> int:
        return len(self.poses) + 1

    def all_poses(self) -> list[Pose]:
        return [Pose.identity(), *self.poses]

    def copy(self) -> "ParameterBlock":
        return ParameterBlock(list(self.poses), self.structure.copy())


@dataclass(frozen=True)
class CostBreakdown:
    v_icp: float    # mm^2
    v_ba: float     # pixels^2
    w: float        # mm^2 / pixel^2
    v_total: float


def camera_pairs(n: int) -> list[tuple[int, int]]:
    """Unordered camera index pairs (0-based), lexicographic order."""
    return [(l, k) for l in range(n) for k in range(l + 1, n)]


def ba_residual(k: Intrinsics, t: Pose, x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """2D reprojection residual ``q - project(k, t, x)``."""
    return np.asarray(q, dtype=float) - project(k, t, x)


def icp_residual(t_l: Pose, t_k: Pose, p_l: np.ndarray, p_k: np.ndarray) -> np.ndarray:
    """3D alignment residual between the two camera-frame measurements."""
    return transform_point(t_l, np.asarray(p_l, float)) - transform_point(t_k, np.asarray(p_k, float))


def _camera_frame_points(pose: Pose, points: np.ndarray) -> np.ndarray:
    return (points - pose.translation) @ pose.rotation


def ba_residual_matrix(
    s: ParameterBlock, d: Dataset, min_depth: float | None = None
) -> tuple[np.ndarray, bool]:
    """All 2D residuals as an (N, H, 2) array, cameras outer, features inner.

    With ``min_depth`` set, camera-frame depths are clamped there instead of
    raising; the returned flag reports whether any clamp triggered.
    """
    n, h = d.num_cameras, d.num_2d
    res = np.empty((n, h, 2))
    clamped = False
    for l, (camera, pose) in enumerate(zip(d.cameras, s.all_poses())):
        k = camera.intrinsics
        xc = _camera_frame_points(pose, s.structure)
        z = xc[:, 2]
        if min_depth is None:
            if np.any(z <= 0.0):
                raise PointBehindCamera(f"structure point behind camera {camera.id}")
        else:
            bad = z < min_depth
            if np.any(bad):
                clamped = True
                z = np.where(bad, min_depth, z)
        res[l, :, 0] = d.obs2d[l, :, 0] - (k.fx * xc[:, 0] / z + k.cx)
        res[l, :, 1] = d.obs2d[l, :, 1] - (k.fy * xc[:, 1] / z + k.cy)
    return res, clamped


def icp_residual_matrix(poses: list[Pose], d: Dataset) -> np.ndarray:
    """All 3D residuals as a (P, J, 3) array over unordered pairs."""
    world = np.stack([transform_point(pose, d.obs3d[l]) for l, pose in enumerate(poses)])
    pairs = camera_pairs(d.num_cameras)
    return np.stack([world[l] - world[k] for l, k in pairs]) if pairs else np.empty((0, d.num_3d, 3))


def ba_cost(s: ParameterBlock, d: Dataset) -> float:
    """Total squared reprojection error, pixels^2."""
    res, _ = ba_residual_matrix(s, d)
    return float(np.sum(res * res))


def icp_cost(poses: list[Pose], d: Dataset, ordered_pairs: bool = False) -> float:
    """Total squared 3D alignment error, mm^2."""
    res = icp_residual_matrix(poses, d)
    total = float(np.sum(res * res))
    return 2.0 * total if ordered_pairs else total


def weight_from_variances(sigma3d_sq: float, sigma2d_sq: float) -> float:
    """Joint-cost weight ``w = 2 sigma3d^2 / sigma2d^2``."""
    if not sigma2d_sq > 0:
        raise ValueError("sigma2d_sq must be positive")
    return 2.0 * sigma3d_sq / sigma2d_sq


def joint_cost(s: ParameterBlock, d: Dataset, w: float) -> CostBreakdown:
    """Weighted bi-objective cost ``V_ICP + w * V_BA``."""
    if w < 0:
        raise ValueError("w must be non-negative")
    v_icp = icp_cost(s.all_poses(), d)
    v_ba = ba_cost(s, d)
    return CostBreakdown(v_icp=v_icp, v_ba=v_ba, w=w, v_total=v_icp + w * v_ba)


def observation_counts(d: Dataset) -> tuple[int, int]:
    """(a, b): 3D correspondences over unordered pairs, and 2D observations."""
    n = d.num_cameras
    return len(camera_pairs(n)) * d.num_3d, n * d.num_2d


def baicp_heuristic_scale(s: ParameterBlock, d: Dataset) -> float:
    """``(avgDepth / avgFocal)^2`` over current structure and all cameras."""
    depths = [
        _camera_frame_points(pose, s.structure)[:, 2] for pose in s.all_poses()
    ]
    avg_depth = float(np.mean(np.concatenate(depths)))
    avg_focal = float(np.mean([(c.intrinsics.fx + c.intrinsics.fy) / 2.0 for c in d.cameras]))
    return (avg_depth / avg_focal) ** 2


def baicp_term_scales(s: ParameterBlock, d: Dataset, c: float) -> tuple[float, float]:
    """Multipliers (alpha, beta) on (V_ICP, V_BA) for the blended objective."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in [0, 1]")
    a, b = observation_counts(d)
    if a <= 0 or b <= 0:
        raise ValueError("blended cost needs both 2D and 3D correspondences")
    return (1.0 - c) / a, baicp_heuristic_scale(s, d) * c / b


def baicp_plus_cost(s: ParameterBlock, d: Dataset, c: float) -> float:
    """Count-normalized blend ``((1-c)/a) V_ICP + (s c / b) V_BA``."""
    alpha, beta = baicp_term_scales(s, d, c)
    v_icp = icp_cost(s.all_poses(), d)
    v_ba = ba_cost(s, d) if beta != 0.0 else 0.0
    return alpha * v_icp + beta * v_ba


def init_structure(d: Dataset, poses: list[Pose]) -> np.ndarray:
    """Initial world points from the depth measurements of the 2D features.

    Each point is the mean, over cameras carrying a finite measurement, of
    that camera's vertex measurement mapped to the world frame.
    """
    if d.obs2d_xyz is None:
        raise MissingCorrespondence("dataset carries no 3D measurements for its 2D features")
    mapped = np.stack([transform_point(pose, d.obs2d_xyz[l]) for l, pose in enumerate(poses)])
    valid = np.all(np.isfinite(mapped), axis=2)  # (N, H)
    counts = valid.sum(axis=0)
    if np.any(counts == 0):
        missing = d.ids2d[counts == 0]
        raise MissingCorrespondence(f"2D feature ids {missing.tolist()} have no 3D measurement in any camera")
    filled = np.where(valid[:, :, None], mapped, 0.0)
    return filled.sum(axis=0) / counts[:, None]
