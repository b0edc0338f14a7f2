"""Extrinsic calibration refinement for multi-camera RGB-D rigs.

Fuses 2D reprojection residuals (from RGB features) and 3D alignment
residuals (from depth features) in one weighted least-squares objective,
with the weight derived from, or jointly estimated with, the sensor noise
variances.  Ships a synthetic scene simulator, a DLT initializer, an LM
solver, and an experiment harness with a CLI front end.
"""

from .autoweight import (
    AutoWeightOptions,
    AutoWeightReport,
    calibrate_auto,
    estimate_sigma2d_sq,
    estimate_sigma3d_sq,
)
from .costs import (
    CostBreakdown,
    NoiseModel,
    ParameterBlock,
    ba_cost,
    ba_residual,
    baicp_plus_cost,
    icp_cost,
    icp_residual,
    init_structure,
    joint_cost,
    weight_from_variances,
)
from .dlt import estimate_pose_dlt, initialize_all
from .evaluation import (
    BoxplotStats,
    ExperimentConfig,
    PoseError,
    aggregate_rows,
    boxplot_stats,
    mean_pose_error,
    pose_error,
    run_experiment,
)
from .geometry import (
    Intrinsics,
    Pose,
    compose,
    exp_axis_angle,
    invert,
    log_rotation,
    project,
    rotation_geodesic_angle,
    transform_point,
)
from .scene import (
    CameraSpec,
    Dataset,
    Region,
    SceneConfig,
    add_noise,
    four_camera_rig,
    generate_dataset,
    generate_world_points,
    preset_config,
    render_observations,
    two_camera_rig,
)
from .solver import (
    Objective,
    SolveReport,
    SolverOptions,
    apply_increment,
    jacobians,
    lm_step,
    pack,
    solve,
    unpack,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
