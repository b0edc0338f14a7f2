"""Synthetic multi-view RGB-D data generation.

A scene is a set of cameras with known ground-truth poses plus two point
populations sampled uniformly in a world-frame cuboid, each accepted only if
visible to every camera:

* ``num_2d`` bundle points, observed as pixel features in every view.  Each
  2D observation also carries the depth sensor's 3D measurement of the same
  point (the vertex-map value at that pixel), which seeds pose and structure
  initialization but takes no part in the 3D alignment cost.
* ``num_3d`` alignment points, observed as camera-frame 3D features only.

Noise is i.i.d. zero-mean Gaussian per coordinate: ``sigma_2d`` pixels on
pixel features, ``sigma_3d`` millimeters on every 3D measurement.

Reproducibility: generation is a pure function of (config, seed).  Seeds are
split with ``numpy.random.SeedSequence`` and variates drawn from the PCG64
``default_rng``, so experiment harnesses can derive one independent
sub-stream per realization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import VisibilityExhausted
from .geometry import Intrinsics, Pose, exp_axis_angle, invert, project, transform_point


@dataclass(frozen=True)
class CameraSpec:
    """One rig camera: 1-based id, intrinsics, and optional ground-truth pose."""

    id: int
    intrinsics: Intrinsics
    gt_pose: Pose | None = None


@dataclass(frozen=True)
class Region:
    """Axis-aligned cuboid in the world frame, bounds in millimeters."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.array(self.lo, dtype=float).reshape(3))
        object.__setattr__(self, "hi", np.array(self.hi, dtype=float).reshape(3))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


@dataclass(frozen=True)
class SceneConfig:
    cameras: tuple[CameraSpec, ...]
    region: Region
    num_2d: int
    num_3d: int
    sigma_2d: float
    sigma_3d: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [c.id for c in self.cameras]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("camera ids must be unique and contiguous from 1")
        gauge = self.cameras[0].gt_pose
        if gauge is None or not np.allclose(gauge.rotation, np.eye(3)) or np.any(gauge.translation != 0.0):
            raise ValueError("camera 1 must have the identity ground-truth pose")
        if self.num_2d < 6:
            raise ValueError("num_2d >= 6 required (DLT solvability)")
        if self.num_3d < 3:
            raise ValueError("num_3d >= 3 required")
        if self.sigma_2d < 0 or self.sigma_3d < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.region.volume <= 0:
            raise ValueError("region must have positive volume")


@dataclass
class Dataset:
    """Feature observations for one rig.

    Array layout: cameras indexed 0..N-1 in id order; features positionally
    aligned with ``ids2d`` / ``ids3d``.  All 3D coordinates are camera-frame
    millimeters, pixels for 2D.  ``obs2d_xyz`` holds the depth sensor's
    measurement of each bundle point (one per 2D observation).
    """

    cameras: list[CameraSpec]
    ids2d: np.ndarray                 # (H,) int feature ids
    obs2d: np.ndarray                 # (N, H, 2) pixels
    obs2d_xyz: np.ndarray | None      # (N, H, 3) mm, camera frame; NaN rows where absent
    ids3d: np.ndarray                 # (J,) int feature ids
    obs3d: np.ndarray                 # (N, J, 3) mm, camera frame
    true_points_2d: np.ndarray | None = None   # (H, 3) world mm
    true_points_3d: np.ndarray | None = None   # (J, 3) world mm
    noise: tuple[float, float] | None = None   # (sigma_2d, sigma_3d)

    @property
    def num_cameras(self) -> int:
        return len(self.cameras)

    @property
    def num_2d(self) -> int:
        return len(self.ids2d)

    @property
    def num_3d(self) -> int:
        return len(self.ids3d)

    def gt_poses(self) -> list[Pose]:
        poses = [c.gt_pose for c in self.cameras]
        if any(p is None for p in poses):
            raise ValueError("dataset has no ground-truth poses")
        return poses

    def validate(self) -> None:
        n = self.num_cameras
        if self.obs2d.shape != (n, self.num_2d, 2) or self.obs3d.shape != (n, self.num_3d, 3):
            raise ValueError("observation array shapes inconsistent with camera/feature counts")
        if self.obs2d_xyz is not None and self.obs2d_xyz.shape != (n, self.num_2d, 3):
            raise ValueError("obs2d_xyz shape inconsistent with obs2d")
        for arr in (self.obs2d, self.obs3d):
            if not np.all(np.isfinite(arr)):
                raise ValueError("observations contain non-finite values")


def _in_view(points: np.ndarray, camera: CameraSpec) -> np.ndarray:
    """Boolean mask of world points with positive depth and in-bounds projection."""
    k = camera.intrinsics
    xc = transform_point(invert(camera.gt_pose), points)
    ok = xc[:, 2] > 0.0
    z = np.where(ok, xc[:, 2], 1.0)
    u = k.fx * xc[:, 0] / z + k.cx
    v = k.fy * xc[:, 1] / z + k.cy
    return ok & (u >= 0.0) & (u < k.width) & (v >= 0.0) & (v < k.height)


def generate_world_points(config: SceneConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``count`` points uniformly in the region, visible to all cameras.

    Rejection sampling; raises :class:`VisibilityExhausted` after
    ``10000 * count`` consecutive rejections (region and FOVs do not overlap).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = config.region.lo, config.region.hi
    accepted: list[np.ndarray] = []
    consecutive_rejections = 0
    limit = 10000 * count
    batch = max(count, 64)
    while len(accepted) < count:
        pts = rng.uniform(lo, hi, size=(batch, 3))
        mask = np.ones(len(pts), dtype=bool)
        for camera in config.cameras:
            mask &= _in_view(pts, camera)
        for p, ok in zip(pts, mask):
            if ok:
                accepted.append(p)
                consecutive_rejections = 0
                if len(accepted) == count:
                    break
            else:
                consecutive_rejections += 1
                if consecutive_rejections >= limit:
                    raise VisibilityExhausted(
                        f"{limit} consecutive rejections; region is not visible to all cameras"
                    )
    return np.array(accepted[:count])


def render_observations(
    points2d_src: np.ndarray, points3d_src: np.ndarray, cameras: list[CameraSpec] | tuple[CameraSpec, ...]
) -> Dataset:
    """Noise-free observations of the two point sets in every camera."""
    points2d_src = np.asarray(points2d_src, dtype=float)
    points3d_src = np.asarray(points3d_src, dtype=float)
    n = len(cameras)
    obs2d = np.empty((n, len(points2d_src), 2))
    obs2d_xyz = np.empty((n, len(points2d_src), 3))
    obs3d = np.empty((n, len(points3d_src), 3))
    for l, camera in enumerate(cameras):
        world_to_cam = invert(camera.gt_pose)
        obs2d[l] = project(camera.intrinsics, camera.gt_pose, points2d_src)
        obs2d_xyz[l] = transform_point(world_to_cam, points2d_src)
        obs3d[l] = transform_point(world_to_cam, points3d_src)
    return Dataset(
        cameras=list(cameras),
        ids2d=np.arange(len(points2d_src)),
        obs2d=obs2d,
        obs2d_xyz=obs2d_xyz,
        ids3d=np.arange(len(points3d_src)),
        obs3d=obs3d,
        true_points_2d=points2d_src.copy(),
        true_points_3d=points3d_src.copy(),
        noise=None,
    )


def add_noise(d: Dataset, sigma_2d: float, sigma_3d: float, rng: np.random.Generator) -> Dataset:
    """Add i.i.d. per-coordinate Gaussian noise to every measurement.

    Ground-truth poses and true points are untouched.  Draw order is fixed
    (2D pixels, then vertex measurements, then 3D features) so results are
    deterministic for a given generator state.
    """
    obs2d = d.obs2d + sigma_2d * rng.standard_normal(d.obs2d.shape)
    obs2d_xyz = None
    if d.obs2d_xyz is not None:
        obs2d_xyz = d.obs2d_xyz + sigma_3d * rng.standard_normal(d.obs2d_xyz.shape)
    obs3d = d.obs3d + sigma_3d * rng.standard_normal(d.obs3d.shape)
    return Dataset(
        cameras=d.cameras,
        ids2d=d.ids2d.copy(),
        obs2d=obs2d,
        obs2d_xyz=obs2d_xyz,
        ids3d=d.ids3d.copy(),
        obs3d=obs3d,
        true_points_2d=None if d.true_points_2d is None else d.true_points_2d.copy(),
        true_points_3d=None if d.true_points_3d is None else d.true_points_3d.copy(),
        noise=(sigma_2d, sigma_3d),
    )


def generate_dataset(config: SceneConfig, seed=None) -> Dataset:
    """Sample, render, and noise one dataset; pure in (config, seed).

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; defaults to
    ``config.seed``.
    """
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    ss_points, ss_noise = ss.spawn(2)
    rng_points = np.random.default_rng(ss_points)
    pts2d = generate_world_points(config, config.num_2d, rng_points)
    pts3d = generate_world_points(config, config.num_3d, rng_points)
    clean = render_observations(pts2d, pts3d, config.cameras)
    return add_noise(clean, config.sigma_2d, config.sigma_3d, np.random.default_rng(ss_noise))


# --------------------------------------------------------------------------
# Rig presets
# --------------------------------------------------------------------------

_DEFAULT_INTRINSICS = Intrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


def _look_at(position: np.ndarray, target: np.ndarray) -> Pose:
    """Camera-to-world pose at ``position`` with +z toward ``target``.

    Roll is fixed by keeping the camera's +y (image down) aligned with world
    +y as closely as possible.
    """
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    forward = forward / np.linalg.norm(forward)
    down_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(down_hint, forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(np.column_stack((right, down, forward)), position)


def _rig(positions: list, target, intrinsics: Intrinsics) -> tuple[CameraSpec, ...]:
    cameras = [CameraSpec(id=1, intrinsics=intrinsics, gt_pose=Pose.identity())]
    for i, pos in enumerate(positions, start=2):
        cameras.append(CameraSpec(id=i, intrinsics=intrinsics, gt_pose=_look_at(np.asarray(pos, float), target)))
    return tuple(cameras)


def two_camera_rig(
    num_2d: int = 100,
    num_3d: int = 100,
    sigma_2d: float = 1.0,
    sigma_3d: float = 18.0,
    seed: int = 0,
) -> SceneConfig:
    """Two converging cameras; camera 2 offset sideways, toed in at ~37 deg."""
    target = np.array([0.0, 0.0, 2500.0])
    cameras = _rig([[1650.0, 80.0, 300.0]], target, _DEFAULT_INTRINSICS)
    region = Region(lo=[-450.0, -330.0, 2100.0], hi=[450.0, 330.0, 2900.0])
    return SceneConfig(cameras, region, num_2d, num_3d, sigma_2d, sigma_3d, seed)


def four_camera_rig(
    num_2d: int = 100,
    num_3d: int = 100,
    sigma_2d: float = 1.0,
    sigma_3d: float = 18.0,
    seed: int = 0,
) -> SceneConfig:
    """Four cameras on an arc with intersecting fields of view.

    Each camera individually sits a little closer to the observed region than
    the two-camera rig's second camera, so per-camera conditioning is at
    least comparable while the shared data volume grows.
    """
    target = np.array([0.0, 0.0, 2500.0])
    positions = [
        [1600.0, 90.0, 520.0],
        [-1600.0, -70.0, 520.0],
        [1850.0, 60.0, 1000.0],
    ]
    cameras = _rig(positions, target, _DEFAULT_INTRINSICS)
    region = Region(lo=[-500.0, -380.0, 2050.0], hi=[500.0, 380.0, 2950.0])
    return SceneConfig(cameras, region, num_2d, num_3d, sigma_2d, sigma_3d, seed)


PRESETS = {"two-cam": two_camera_rig, "four-cam": four_camera_rig}


def preset_config(name: str, **overrides) -> SceneConfig:
    """Instantiate a named rig preset, applying keyword overrides."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    base = factory()
    field_overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **field_overrides) if field_overrides else base
