"""Rigid-body transforms, rotation parametrization, and pinhole projection.

Conventions used throughout the package:

* 3D quantities are in millimeters, 2D quantities in pixels.
* A ``Pose`` maps camera-frame points to the world frame: ``x_w = R x_c + t``.
* Camera frame: +x right, +y down, +z along the optical axis.
* Rotations are stored as 3x3 orthonormal matrices with det = +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import PointBehindCamera

ROTATION_ATOL = 1e-9
_SMALL_ANGLE = 1e-10


def is_rotation(matrix: np.ndarray, atol: float = ROTATION_ATOL) -> bool:
    """True if ``matrix`` is orthonormal with determinant +1 within ``atol``."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (3, 3):
        return False
    ortho = np.abs(matrix @ matrix.T - np.eye(3)).max() <= atol
    return bool(ortho and abs(np.linalg.det(matrix) - 1.0) <= atol)


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (cross-product) matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_axis_angle(r: np.ndarray) -> np.ndarray:
    """Rodrigues exponential: axis-angle 3-vector (radians) to rotation matrix."""
    r = np.asarray(r, dtype=float).reshape(3)
    angle = float(np.linalg.norm(r))
    if angle < _SMALL_ANGLE:
        # second-order Taylor series; exact to double precision at this scale
        K = skew(r)
        return np.eye(3) + K + 0.5 * (K @ K)
    K = skew(r / angle)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def log_rotation(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`exp_axis_angle`; returns a vector with norm in [0, pi].

    At angle pi the axis sign is ambiguous; the convention here is to pick the
    axis whose first nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    trace = float(np.trace(R))
    angle = math.acos(min(1.0, max(-1.0, 0.5 * (trace - 1.0))))
    if angle < _SMALL_ANGLE:
        S = 0.5 * (R - R.T)
        return np.array([S[2, 1], S[0, 2], S[1, 0]])
    if math.pi - angle < 1e-6:
        # R = I + 2 sin^2(angle/2) (aa^T - I) near pi; recover axis from the
        # symmetric part, then fix the sign convention.
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        # off-diagonal signs relative to the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0.0:
            for i in range(3):
                if i != k and A[k, i] < 0.0:
                    axis[i] = -axis[i]
        axis /= np.linalg.norm(axis)
        for component in axis:
            if component != 0.0:
                if component < 0.0:
                    axis = -axis
                break
        return axis * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def rotation_geodesic_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance on SO(3) between two rotations, in [0, pi].

    Equals arccos((tr(a^T b) - 1) / 2) but is computed as
    atan2(|sin|, cos) of the relative rotation, which stays accurate for
    angles near 0 where the arccos form loses ~8 digits.
    """
    q = np.asarray(a).T @ np.asarray(b)
    cos_angle = 0.5 * (float(np.trace(q)) - 1.0)
    sin_vec = 0.5 * np.array([q[2, 1] - q[1, 2], q[0, 2] - q[2, 0], q[1, 0] - q[0, 1]])
    return math.atan2(float(np.linalg.norm(sin_vec)), cos_angle)


def rotation_z(angle: float) -> np.ndarray:
    """Rotation about the +z axis by ``angle`` radians."""
    return exp_axis_angle(np.array([0.0, 0.0, angle]))


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: ``x_w = rotation @ x_c + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))
        self.rotation.flags.writeable = False
        self.translation.flags.writeable = False

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis_angle: np.ndarray, translation: np.ndarray) -> "Pose":
        return Pose(exp_axis_angle(axis_angle), translation)

    def axis_angle(self) -> np.ndarray:
        return log_rotation(self.rotation)

    def is_valid(self, atol: float = ROTATION_ATOL) -> bool:
        return is_rotation(self.rotation, atol) and bool(np.all(np.isfinite(self.translation)))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def compose(a: Pose, b: Pose) -> Pose:
    """Composition ``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def transform_point(p: Pose, x: np.ndarray) -> np.ndarray:
    """Apply the rigid transform to a 3-vector or an (N, 3) array of points."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return p.rotation @ x + p.translation
    return x @ p.rotation.T + p.translation


def project(k: Intrinsics, t: Pose, x_world: np.ndarray) -> np.ndarray:
    """Pinhole projection of world point(s) through camera pose ``t``.

    Raises :class:`PointBehindCamera` if any point has camera-frame depth <= 0.
    No lens distortion: cameras are assumed intrinsically calibrated.
    """
    xc = transform_point(invert(t), x_world)
    if xc.ndim == 1:
        if xc[2] <= 0.0:
            raise PointBehindCamera(f"depth {xc[2]:.3f} mm is not positive")
        return np.array([k.fx * xc[0] / xc[2] + k.cx, k.fy * xc[1] / xc[2] + k.cy])
    z = xc[:, 2]
    if np.any(z <= 0.0):
        raise PointBehindCamera(f"{int(np.sum(z <= 0.0))} point(s) at non-positive depth")
    return np.column_stack((k.fx * xc[:, 0] / z + k.cx, k.fy * xc[:, 1] / z + k.cy))
