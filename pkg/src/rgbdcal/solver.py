"""Damped least-squares (Levenberg-Marquardt) pose/structure refinement.

The optimization variables are local increments: each non-gauge camera gets a
6-vector (axis-angle rotation increment composed onto the current rotation,
plus an additive translation increment) and each structure point 3 additive
coordinates.  Camera 1 is fixed to the identity and has no entries.

One generalized objective covers all modes::

    alpha * ||B||^2 + beta * ||A||^2

where ``B`` stacks 3D alignment residuals and ``A`` 2D reprojection
residuals:

* ``Objective.ba()``            -- (0, 1), 2D only
* ``Objective.icp()``           -- (1, 0), 3D only, structure frozen
* ``Objective.joint(w)``        -- (1, w)
* ``Objective.joint_scaled(...)``-- (1/(2 s3d), 1/s2d); same minimizer as
  ``joint`` with the matching ``w``, objective scaled by a positive constant
* ``Objective.baicp_plus(c)``   -- count-normalized blend; scale factors
  computed once from the initial structure estimate

Each iteration solves ``(H + lambda diag(H)) dS = -g`` with
``H = alpha Jb'Jb + beta Ja'Ja`` and ``g = alpha Jb'B + beta Ja'A``; steps
are accepted only if the cost strictly decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .costs import (
    ParameterBlock,
    baicp_term_scales,
    ba_residual_matrix,
    camera_pairs,
    icp_residual_matrix,
)
from .exceptions import DimensionMismatch, JacobianMismatch, NonFiniteCost, SingularSystem
from .geometry import Pose, exp_axis_angle, log_rotation, transform_point
from .scene import Dataset

# depth clamp for structure points that wander behind a camera mid-iteration;
# a step whose evaluation needed the clamp is always rejected
MIN_DEPTH_MM = 1.0

_DIAG_FLOOR = 1e-12
_MAX_REJECTIONS = 50


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    tol_step: float = 1e-10
    tol_cost_rel: float = 1e-12
    jacobian_mode: str = "analytic"  # analytic | numeric | check

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if self.jacobian_mode not in ("analytic", "numeric", "check"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_trace: list[float]
    converged: bool
    termination_reason: str  # step_tol | cost_tol | max_iter


@dataclass(frozen=True)
class Objective:
    kind: str
    icp_scale: float = 1.0
    ba_scale: float = 1.0
    c: float | None = None

    @staticmethod
    def ba() -> "Objective":
        return Objective("ba", icp_scale=0.0, ba_scale=1.0)

    @staticmethod
    def icp() -> "Objective":
        return Objective("icp", icp_scale=1.0, ba_scale=0.0)

    @staticmethod
    def joint(w: float) -> "Objective":
        if w < 0:
            raise ValueError("w must be non-negative")
        return Objective("joint", icp_scale=1.0, ba_scale=w)

    @staticmethod
    def joint_scaled(sigma2d_sq: float, sigma3d_sq: float) -> "Objective":
        if not (sigma2d_sq > 0 and sigma3d_sq > 0):
            raise ValueError("variances must be positive")
        return Objective("joint", icp_scale=1.0 / (2.0 * sigma3d_sq), ba_scale=1.0 / sigma2d_sq)

    @staticmethod
    def baicp_plus(c: float) -> "Objective":
        if not 0.0 <= c <= 1.0:
            raise ValueError("c must lie in [0, 1]")
        return Objective("baicp_plus", c=c)


# --------------------------------------------------------------------------
# Parameter vector layout
# --------------------------------------------------------------------------


def layout_size(num_cameras: int, num_points: int) -> int:
    return 6 * (num_cameras - 1) + 3 * num_points


def pack(s: ParameterBlock) -> np.ndarray:
    """Flatten to [per camera 2..N: axis-angle, translation; structure xyz]."""
    parts = []
    for pose in s.poses:
        parts.append(log_rotation(pose.rotation))
        parts.append(pose.translation)
    parts.append(s.structure.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(v: np.ndarray, num_cameras: int, num_points: int) -> ParameterBlock:
    v = np.asarray(v, dtype=float).ravel()
    expected = layout_size(num_cameras, num_points)
    if v.size != expected:
        raise DimensionMismatch(f"expected length {expected}, got {v.size}")
    poses = []
    for l in range(num_cameras - 1):
        chunk = v[6 * l : 6 * l + 6]
        poses.append(Pose(exp_axis_angle(chunk[:3]), chunk[3:]))
    structure = v[6 * (num_cameras - 1) :].reshape(num_points, 3)
    return ParameterBlock(poses, structure)


def apply_increment(s: ParameterBlock, delta: np.ndarray) -> ParameterBlock:
    """Compose a local increment onto the block; zero delta is the identity."""
    delta = np.asarray(delta, dtype=float).ravel()
    expected = layout_size(s.num_cameras, len(s.structure))
    if delta.size != expected:
        raise DimensionMismatch(f"expected length {expected}, got {delta.size}")
    poses = []
    for l, pose in enumerate(s.poses):
        chunk = delta[6 * l : 6 * l + 6]
        if np.any(chunk[:3]):
            rotation = exp_axis_angle(chunk[:3]) @ pose.rotation
        else:
            rotation = pose.rotation
        poses.append(Pose(rotation, pose.translation + chunk[3:]))
    structure = s.structure + delta[6 * len(s.poses) :].reshape(-1, 3)
    return ParameterBlock(poses, structure)


# --------------------------------------------------------------------------
# Residual stacks and Jacobians
# --------------------------------------------------------------------------


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def residual_stacks(
    s: ParameterBlock, d: Dataset, min_depth: float | None = None
) -> tuple[np.ndarray, np.ndarray, bool]:
    """(A, B, clamped): flattened 2D and 3D residual stacks.

    A has 2 entries per (camera, feature), cameras outer; B has 3 entries per
    (pair, feature), pairs in lexicographic order.
    """
    res2d, clamped = ba_residual_matrix(s, d, min_depth=min_depth)
    res3d = icp_residual_matrix(s.all_poses(), d)
    return res2d.ravel(), res3d.ravel(), clamped


def _analytic_jacobians(
    s: ParameterBlock, d: Dataset, min_depth: float | None
) -> tuple[np.ndarray, np.ndarray]:
    n, h, j = d.num_cameras, d.num_2d, d.num_3d
    n_full = layout_size(n, h)
    pairs = camera_pairs(n)
    J_A = np.zeros((2 * n * h, n_full))
    J_B = np.zeros((3 * len(pairs) * j, n_full))
    poses = s.all_poses()
    col0_struct = 6 * (n - 1)

    # 2D residuals: a = q - proj(R^T (x - t)); index arrays broadcast to (h, 2, 3)
    struct_rows = 2 * np.arange(h)[:, None, None] + np.arange(2)[None, :, None]
    struct_cols = col0_struct + 3 * np.arange(h)[:, None, None] + np.arange(3)[None, None, :]
    for l, (camera, pose) in enumerate(zip(d.cameras, poses)):
        k = camera.intrinsics
        offset = pose.translation
        v = s.structure - offset
        xc = v @ pose.rotation
        z = xc[:, 2]
        if min_depth is not None:
            z = np.maximum(z, min_depth)
        P = np.zeros((h, 2, 3))
        P[:, 0, 0] = k.fx / z
        P[:, 0, 2] = -k.fx * xc[:, 0] / (z * z)
        P[:, 1, 1] = k.fy / z
        P[:, 1, 2] = -k.fy * xc[:, 1] / (z * z)
        PRt = np.einsum("hij,kj->hik", P, pose.rotation)  # P @ R^T
        row0 = 2 * l * h
        J_A[row0 + struct_rows, struct_cols] = -PRt
        if l > 0:
            col0 = 6 * (l - 1)
            M = np.einsum("ji,hjk->hik", pose.rotation, _skew_batch(v))  # R^T [x-t]x
            drot = -np.einsum("hij,hjk->hik", P, M)
            block = np.concatenate([drot, PRt], axis=2).reshape(2 * h, 6)
            J_A[row0 : row0 + 2 * h, col0 : col0 + 6] = block

    # 3D residuals: b = (R_l p_l + t_l) - (R_k p_k + t_k)
    rotated = [d.obs3d[l] @ poses[l].rotation.T for l in range(n)]
    eye_rep = np.tile(np.eye(3), (j, 1, 1))
    for p_idx, (l, k_idx) in enumerate(pairs):
        row0 = 3 * p_idx * j
        for cam, sign in ((l, 1.0), (k_idx, -1.0)):
            if cam == 0:
                continue
            col0 = 6 * (cam - 1)
            drot = -sign * _skew_batch(rotated[cam])
            block = np.concatenate([drot, sign * eye_rep], axis=2).reshape(3 * j, 6)
            J_B[row0 : row0 + 3 * j, col0 : col0 + 6] = block
    return J_A, J_B


def _numeric_jacobians(
    s: ParameterBlock, d: Dataset, min_depth: float | None
) -> tuple[np.ndarray, np.ndarray]:
    n_full = layout_size(s.num_cameras, len(s.structure))
    base = np.abs(pack(s))
    steps = 1e-6 * np.maximum(1.0, base)
    A0, B0, _ = residual_stacks(s, d, min_depth=min_depth)
    J_A = np.zeros((A0.size, n_full))
    J_B = np.zeros((B0.size, n_full))
    delta = np.zeros(n_full)
    for i in range(n_full):
        step = steps[i]
        delta[i] = step
        A_plus, B_plus, _ = residual_stacks(apply_increment(s, delta), d, min_depth=min_depth)
        delta[i] = -step
        A_minus, B_minus, _ = residual_stacks(apply_increment(s, delta), d, min_depth=min_depth)
        delta[i] = 0.0
        J_A[:, i] = (A_plus - A_minus) / (2.0 * step)
        J_B[:, i] = (B_plus - B_minus) / (2.0 * step)
    return J_A, J_B


def jacobians(
    s: ParameterBlock, d: Dataset, mode: str = "analytic", min_depth: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(J_A, J_B, A, B): residual Jacobians and stacks at the current block.

    Columns follow the increment layout (camera 1 has none; structure-point
    columns of J_B are identically zero).  ``check`` mode compares the
    analytic and central-difference results entry-wise and raises
    :class:`JacobianMismatch` beyond 1e-4 relative (1e-8 absolute floor).
    """
    A, B, _ = residual_stacks(s, d, min_depth=min_depth)
    if mode == "analytic":
        J_A, J_B = _analytic_jacobians(s, d, min_depth)
    elif mode == "numeric":
        J_A, J_B = _numeric_jacobians(s, d, min_depth)
    elif mode == "check":
        J_A, J_B = _analytic_jacobians(s, d, min_depth)
        Jn_A, Jn_B = _numeric_jacobians(s, d, min_depth)
        for name, Ja, Jn in (("2d", J_A, Jn_A), ("3d", J_B, Jn_B)):
            diff = np.abs(Ja - Jn)
            scale = np.maximum(np.abs(Ja), np.abs(Jn))
            bad = (diff > 1e-8) & (diff > 1e-4 * scale)
            if np.any(bad):
                worst = float((diff / np.maximum(scale, 1e-300))[bad].max())
                raise JacobianMismatch(
                    f"{name} residual Jacobian mismatch: worst relative discrepancy {worst:.3e}"
                )
    else:
        raise ValueError(f"unknown jacobian mode {mode!r}")
    return J_A, J_B, A, B


# --------------------------------------------------------------------------
# LM steps
# --------------------------------------------------------------------------


def _damped_solve(H: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    diag = np.diag(H).copy()
    diag[diag <= 0.0] = _DIAG_FLOOR
    damped = H + np.diag(lam * diag)
    try:
        factor = cho_factor(damped, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystem(f"damped normal equations not positive definite: {exc}") from exc
    return cho_solve(factor, -g, check_finite=False)


def _normal_equations(
    J_A: np.ndarray, J_B: np.ndarray, A: np.ndarray, B: np.ndarray, alpha: float, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    n_full = J_A.shape[1] if J_A.size else J_B.shape[1]
    H = np.zeros((n_full, n_full))
    g = np.zeros(n_full)
    if alpha != 0.0 and J_B.size:
        H += alpha * (J_B.T @ J_B)
        g += alpha * (J_B.T @ B)
    if beta != 0.0 and J_A.size:
        H += beta * (J_A.T @ J_A)
        g += beta * (J_A.T @ A)
    return H, g


def lm_step(
    J_A: np.ndarray, J_B: np.ndarray, A: np.ndarray, B: np.ndarray, w: float, lam: float
) -> np.ndarray:
    """One damped step for the joint objective ``||B||^2 + w ||A||^2``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    H, g = _normal_equations(J_A, J_B, A, B, 1.0, w)
    return _damped_solve(H, g, lam)


# --------------------------------------------------------------------------
# Full solve
# --------------------------------------------------------------------------


def _resolve_objective(objective: Objective, s0: ParameterBlock, d: Dataset) -> tuple[float, float]:
    if objective.kind == "baicp_plus":
        return baicp_term_scales(s0, d, objective.c)
    return objective.icp_scale, objective.ba_scale


def solve(
    objective: Objective, s0: ParameterBlock, d: Dataset, opts: SolverOptions | None = None
) -> tuple[ParameterBlock, SolveReport]:
    """Minimize the objective from ``s0``; returns the refined block and report."""
    # the normal equations are far below the size where BLAS threading pays;
    # thread wake-up latency would otherwise dominate each iteration
    with threadpool_limits(limits=1):
        return _solve_single_threaded(objective, s0, d, opts)


def _solve_single_threaded(
    objective: Objective, s0: ParameterBlock, d: Dataset, opts: SolverOptions | None
) -> tuple[ParameterBlock, SolveReport]:
    opts = opts or SolverOptions()
    alpha, beta = _resolve_objective(objective, s0, d)
    use_icp = alpha != 0.0
    use_ba = beta != 0.0
    n, h = d.num_cameras, d.num_2d
    n_full = layout_size(n, h)

    active = np.ones(n_full, dtype=bool)
    if objective.kind == "icp":
        active[6 * (n - 1) :] = False

    def evaluate(block: ParameterBlock) -> tuple[np.ndarray, np.ndarray, float, bool]:
        if use_ba:
            res2d, clamped = ba_residual_matrix(block, d, min_depth=MIN_DEPTH_MM)
            A = res2d.ravel()
        else:
            A, clamped = np.zeros(0), False
        B = icp_residual_matrix(block.all_poses(), d).ravel() if use_icp else np.zeros(0)
        cost = alpha * float(B @ B) + beta * float(A @ A)
        return A, B, cost, clamped

    s = s0.copy()
    A, B, cost, _ = evaluate(s)
    if not np.isfinite(cost):
        raise NonFiniteCost(f"objective is {cost} at the initial parameters")

    trace = [cost]
    lam = opts.lambda0
    reason = "max_iter"
    iterations = 0
    for _ in range(opts.max_iterations):
        iterations += 1
        J_A, J_B, _, _ = jacobians(s, d, mode=opts.jacobian_mode, min_depth=MIN_DEPTH_MM)
        H, g = _normal_equations(
            J_A[:, active] if use_ba else np.zeros((0, int(active.sum()))),
            J_B[:, active] if use_icp else np.zeros((0, int(active.sum()))),
            A,
            B,
            alpha,
            beta,
        )
        stop = None
        for _rejection in range(_MAX_REJECTIONS):
            step_active = _damped_solve(H, g, lam)
            if np.max(np.abs(step_active), initial=0.0) < opts.tol_step:
                stop = "step_tol"
                break
            step = np.zeros(n_full)
            step[active] = step_active
            candidate = apply_increment(s, step)
            A_c, B_c, cost_c, clamped = evaluate(candidate)
            if np.isfinite(cost_c) and cost_c < cost and not clamped:
                previous = cost
                s, A, B, cost = candidate, A_c, B_c, cost_c
                trace.append(cost)
                lam = max(lam * opts.lambda_down, 1e-300)
                if previous - cost <= opts.tol_cost_rel * max(previous, 1e-300):
                    stop = "cost_tol"
                break
            lam *= opts.lambda_up
        else:
            stop = "cost_tol"  # no acceptable descent direction at any damping
        if stop is not None:
            reason = stop
            break

    report = SolveReport(
        iterations=iterations,
        initial_cost=trace[0],
        final_cost=cost,
        cost_trace=trace,
        converged=reason != "max_iter",
        termination_reason=reason,
    )
    return s, report
