import numpy as np
import pytest

from rgbdcal import (
    CameraSpec,
    Dataset,
    Intrinsics,
    ParameterBlock,
    Pose,
    init_structure,
    initialize_all,
    two_camera_rig,
)
from rgbdcal.scene import generate_dataset


K500 = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    from rgbdcal.geometry import exp_axis_angle

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return exp_axis_angle(axis * rng.uniform(0.0, np.pi - 1e-3))


def random_pose(rng: np.random.Generator, translation_scale: float = 1000.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def make_dataset(cameras, obs2d=None, obs2d_xyz=None, obs3d=None, **kwargs) -> Dataset:
    """Small hand-built dataset; observation arrays default to empty."""
    n = len(cameras)
    if obs2d is None:
        obs2d = np.zeros((n, 0, 2))
    obs2d = np.asarray(obs2d, dtype=float)
    if obs3d is None:
        obs3d = np.zeros((n, 0, 3))
    obs3d = np.asarray(obs3d, dtype=float)
    if obs2d_xyz is not None:
        obs2d_xyz = np.asarray(obs2d_xyz, dtype=float)
    return Dataset(
        cameras=list(cameras),
        ids2d=np.arange(obs2d.shape[1]),
        obs2d=obs2d,
        obs2d_xyz=obs2d_xyz,
        ids3d=np.arange(obs3d.shape[1]),
        obs3d=obs3d,
        **kwargs,
    )


@pytest.fixture(scope="session")
def noisy_two_cam():
    """One noisy two-camera dataset with its DLT initialization."""
    dataset = generate_dataset(two_camera_rig(seed=99))
    poses0 = initialize_all(dataset)
    s0 = ParameterBlock(poses0[1:], init_structure(dataset, poses0))
    return dataset, s0


@pytest.fixture(scope="session")
def clean_two_cam():
    """Noise-free two-camera dataset."""
    return generate_dataset(two_camera_rig(sigma_2d=0.0, sigma_3d=0.0, seed=17))
