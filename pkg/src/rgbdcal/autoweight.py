"""Joint estimation of the fusion weight and the camera poses.

When the 2D/3D noise levels are unknown, the weight is obtained by
alternating two steps: estimate the noise variances from the residuals at
the current parameters, then re-solve the weighted joint objective with the
weight those variances imply.  The loop stops once the weight's relative
change falls below a tolerance.

Two variance-estimator conventions are provided.  With residual sums
``S3 = sum ||b||^2`` over ``a`` 3D correspondences (unordered pairs) and
``S2 = sum ||a||^2`` over ``b`` 2D observations:

* ``paper_literal``: ``S3 / (2a)`` and ``S2 / b``.
* ``consistent`` (default): ``S3 / (6a)`` and ``S2 / (2b)``.  Each 3D
  residual has 3 coordinates of variance ``2 sigma3d^2`` (two noisy points
  enter the difference) and each 2D residual 2 coordinates of variance
  ``sigma2d^2``, so these divisors make the estimates converge to the true
  per-coordinate variances, and the derived weight to ``2 s3d/s2d``.

The two modes differ by exactly 3x (3D) and 2x (2D), hence 1.5x in the
weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import (
    ParameterBlock,
    ba_residual_matrix,
    icp_residual_matrix,
    observation_counts,
    weight_from_variances,
)
from .exceptions import NoCorrespondences, NoObservations
from .geometry import Pose
from .scene import Dataset
from .solver import Objective, SolveReport, SolverOptions, solve

ESTIMATOR_MODES = ("consistent", "paper_literal")


@dataclass(frozen=True)
class AutoWeightOptions:
    max_outer_iterations: int = 10
    w_rel_tol: float = 1e-3
    estimator_mode: str = "consistent"
    variance_floor: float = 1e-12

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if not self.w_rel_tol > 0:
            raise ValueError("w_rel_tol must be positive")
        if self.estimator_mode not in ESTIMATOR_MODES:
            raise ValueError(f"estimator_mode must be one of {ESTIMATOR_MODES}")


@dataclass
class AutoWeightReport:
    outer_iterations: int = 0
    w_trace: list[float] = field(default_factory=list)
    sigma2d_sq_trace: list[float] = field(default_factory=list)
    sigma3d_sq_trace: list[float] = field(default_factory=list)
    inner_reports: list[SolveReport] = field(default_factory=list)
    w_converged: bool = False


def _divisors(mode: str) -> tuple[float, float]:
    if mode == "paper_literal":
        return 2.0, 1.0
    if mode == "consistent":
        return 6.0, 2.0
    raise ValueError(f"estimator_mode must be one of {ESTIMATOR_MODES}")


def estimate_sigma3d_sq(
    poses: list[Pose], d: Dataset, mode: str = "consistent", variance_floor: float = 1e-12
) -> float:
    """Per-coordinate 3D noise variance from alignment residuals, mm^2."""
    a, _ = observation_counts(d)
    if a < 1:
        raise NoCorrespondences("no 3D correspondences (need >= 2 cameras with 3D features)")
    res = icp_residual_matrix(poses, d)
    per_corr, _ = _divisors(mode)
    return max(float(np.sum(res * res)) / (per_corr * a), variance_floor)


def estimate_sigma2d_sq(
    s: ParameterBlock, d: Dataset, mode: str = "consistent", variance_floor: float = 1e-12
) -> float:
    """Per-coordinate 2D noise variance from reprojection residuals, pixels^2."""
    _, b = observation_counts(d)
    if b < 1:
        raise NoObservations("no 2D observations")
    res, _ = ba_residual_matrix(s, d, min_depth=1.0)
    _, per_obs = _divisors(mode)
    return max(float(np.sum(res * res)) / (per_obs * b), variance_floor)


def calibrate_auto(
    s0: ParameterBlock,
    d: Dataset,
    opts: AutoWeightOptions | None = None,
    solver_opts: SolverOptions | None = None,
) -> tuple[ParameterBlock, float, AutoWeightReport]:
    """Alternate variance estimation and joint refinement from ``s0``.

    Each outer iteration estimates both variances at the current parameters
    (the first pass therefore sees the initialization residuals), recomputes
    the weight, and solves the joint objective.  Returns the final block, the
    final weight, and a per-iteration report.
    """
    opts = opts or AutoWeightOptions()
    report = AutoWeightReport()
    s = s0.copy()
    w_prev: float | None = None
    w = 0.0
    for _ in range(opts.max_outer_iterations):
        sigma3d_sq = estimate_sigma3d_sq(s.all_poses(), d, opts.estimator_mode, opts.variance_floor)
        sigma2d_sq = estimate_sigma2d_sq(s, d, opts.estimator_mode, opts.variance_floor)
        w = weight_from_variances(sigma3d_sq, sigma2d_sq)
        s, inner = solve(Objective.joint(w), s, d, solver_opts)
        report.outer_iterations += 1
        report.w_trace.append(w)
        report.sigma2d_sq_trace.append(sigma2d_sq)
        report.sigma3d_sq_trace.append(sigma3d_sq)
        report.inner_reports.append(inner)
        if w_prev is not None and abs(w - w_prev) / max(w_prev, 1e-12) < opts.w_rel_tol:
            report.w_converged = True
            break
        w_prev = w
    return s, w, report
