"""Error metrics, distribution statistics, and the experiment harness.

An experiment sweeps noise levels and/or feature counts over a rig, draws a
number of noise realizations per sweep point, initializes every realization
once, and refines that same initialization with each requested method.  The
result is one table row per (sweep point, realization, method, non-gauge
camera), deterministic given the configuration.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autoweight as aw
from .costs import ParameterBlock, init_structure, weight_from_variances
from .dlt import initialize_all
from .exceptions import CalibrationError, GaugeCamera
from .geometry import Pose, rotation_geodesic_angle
from .scene import Dataset, SceneConfig, generate_dataset
from .solver import Objective, SolverOptions, solve

METHODS = ("init", "ba", "icp", "joint_known_w", "joint_auto", "baicp_plus")

METRICS = ("rotation_error_rad", "translation_error_rel")


@dataclass(frozen=True)
class PoseError:
    rotation_error: float        # radians
    translation_error_rel: float  # dimensionless


@dataclass(frozen=True)
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]


def pose_error(estimate: Pose, gt: Pose) -> PoseError:
    """Angular error of the residual rotation and relative translation error."""
    t_norm = float(np.linalg.norm(gt.translation))
    if t_norm == 0.0:
        raise GaugeCamera("relative translation error undefined for zero ground-truth translation")
    rot = rotation_geodesic_angle(estimate.rotation, gt.rotation)
    trans = float(np.linalg.norm(estimate.translation - gt.translation)) / t_norm
    return PoseError(rot, trans)


def mean_pose_error(errors: list[PoseError]) -> PoseError:
    """Componentwise arithmetic mean across non-gauge cameras."""
    if not errors:
        raise ValueError("need at least one pose error")
    return PoseError(
        float(np.mean([e.rotation_error for e in errors])),
        float(np.mean([e.translation_error_rel for e in errors])),
    )


def boxplot_stats(samples) -> BoxplotStats:
    """Quartiles by linear interpolation, 1.5*IQR whiskers, rest outliers."""
    arr = np.asarray(list(samples), dtype=float)
    if arr.size < 1:
        raise ValueError("need at least one sample")
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = (arr >= lo_fence) & (arr <= hi_fence)
    outliers = np.sort(arr[~inside])
    return BoxplotStats(
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(arr[inside].min()),
        whisker_high=float(arr[inside].max()),
        outliers=tuple(float(x) for x in outliers),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig
    methods: tuple[str, ...]
    sweep_sigma2d: tuple[float, ...] = ()
    sweep_sigma3d: tuple[float, ...] = ()
    sweep_num_2d: tuple[int, ...] = ()
    sweep_num_3d: tuple[int, ...] = ()
    realizations: int = 50
    base_seed: int = 0
    baicp_c: float = 0.5
    estimator_mode: str = "consistent"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        for f in ("sweep_sigma2d", "sweep_sigma3d", "sweep_num_2d", "sweep_num_3d"):
            object.__setattr__(self, f, tuple(getattr(self, f)))
        if not self.methods:
            raise ValueError("at least one method required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; available: {METHODS}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")

    def sweep_points(self) -> list[dict]:
        """Cartesian product of the sweep lists; scene values fill empty axes."""
        axes = {
            "sigma_2d": self.sweep_sigma2d or (self.scene.sigma_2d,),
            "sigma_3d": self.sweep_sigma3d or (self.scene.sigma_3d,),
            "num_2d": self.sweep_num_2d or (self.scene.num_2d,),
            "num_3d": self.sweep_num_3d or (self.scene.num_3d,),
        }
        return [dict(zip(axes, values)) for values in itertools.product(*axes.values())]


def realization_seed(base_seed: int, sweep_idx: int, realization: int) -> int:
    """Derived 64-bit scene seed; independent stream per (sweep, realization)."""
    ss = np.random.SeedSequence(entropy=(base_seed, sweep_idx, realization))
    return int(ss.generate_state(1, np.uint64)[0])


def _known_weight(sigma_2d: float, sigma_3d: float) -> float:
    # zero-noise sweeps have no defined weight; any positive value shares the
    # same zero-residual optimum
    if sigma_2d <= 0.0:
        return 1.0
    return weight_from_variances(sigma_3d**2, sigma_2d**2)


def _blank_row(point: dict, realization: int, method: str, scene: SceneConfig) -> dict:
    return {
        "sweep_sigma2d": point["sigma_2d"],
        "sweep_sigma3d": point["sigma_3d"],
        "H": point["num_2d"],
        "J": point["num_3d"],
        "num_cameras": len(scene.cameras),
        "realization": realization,
        "method": method,
        "camera_id": None,
        "rotation_error_rad": None,
        "translation_error_rel": None,
        "final_cost": None,
        "iterations": None,
        "w_used": None,
        "sigma2d_sq_est": None,
        "sigma3d_sq_est": None,
        "converged": False,
    }


def _run_method(
    method: str, s0: ParameterBlock, dataset: Dataset, cfg: ExperimentConfig, point: dict
) -> tuple[list[Pose], dict]:
    """Returns (estimated poses incl. gauge, extra row fields)."""
    extra: dict = {"converged": True}
    if method == "init":
        return s0.all_poses(), extra
    if method == "ba":
        objective = Objective.ba()
    elif method == "icp":
        objective = Objective.icp()
    elif method == "joint_known_w":
        w = _known_weight(point["sigma_2d"], point["sigma_3d"])
        objective = Objective.joint(w)
        extra["w_used"] = w
    elif method == "baicp_plus":
        objective = Objective.baicp_plus(cfg.baicp_c)
    elif method == "joint_auto":
        auto_opts = aw.AutoWeightOptions(estimator_mode=cfg.estimator_mode)
        block, w, report = aw.calibrate_auto(s0, dataset, auto_opts, cfg.solver)
        last = report.inner_reports[-1]
        extra.update(
            w_used=w,
            sigma2d_sq_est=report.sigma2d_sq_trace[-1],
            sigma3d_sq_est=report.sigma3d_sq_trace[-1],
            final_cost=last.final_cost,
            iterations=sum(r.iterations for r in report.inner_reports),
            converged=report.w_converged and all(r.converged for r in report.inner_reports),
        )
        return block.all_poses(), extra
    else:
        raise ValueError(f"unknown method {method!r}")
    block, report = solve(objective, s0, dataset, cfg.solver)
    extra.update(
        final_cost=report.final_cost, iterations=report.iterations, converged=report.converged
    )
    return block.all_poses(), extra


def run_realization(cfg: ExperimentConfig, sweep_idx: int, realization: int) -> list[dict]:
    """All rows for one (sweep point, realization): every method, every camera."""
    point = cfg.sweep_points()[sweep_idx]
    scene = replace(
        cfg.scene,
        sigma_2d=point["sigma_2d"],
        sigma_3d=point["sigma_3d"],
        num_2d=point["num_2d"],
        num_3d=point["num_3d"],
        seed=realization_seed(cfg.base_seed, sweep_idx, realization),
    )
    rows: list[dict] = []
    try:
        dataset = generate_dataset(scene)
        poses0 = initialize_all(dataset)
        s0 = ParameterBlock(poses0[1:], init_structure(dataset, poses0))
    except CalibrationError:
        for method in cfg.methods:
            for camera in scene.cameras[1:]:
                row = _blank_row(point, realization, method, scene)
                row["camera_id"] = camera.id
                rows.append(row)
        return rows

    gt = [c.gt_pose for c in scene.cameras]
    for method in cfg.methods:
        try:
            poses, extra = _run_method(method, s0, dataset, cfg, point)
        except CalibrationError:
            poses, extra = None, {"converged": False}
        for l, camera in enumerate(scene.cameras):
            if l == 0:
                continue
            row = _blank_row(point, realization, method, scene)
            row["camera_id"] = camera.id
            row.update((k, v) for k, v in extra.items())
            if poses is not None:
                err = pose_error(poses[l], gt[l])
                row["rotation_error_rad"] = err.rotation_error
                row["translation_error_rel"] = err.translation_error_rel
            rows.append(row)
    return rows


def _worker(args: tuple) -> list[dict]:
    cfg, sweep_idx, realization = args
    return run_realization(cfg, sweep_idx, realization)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, progress=None) -> list[dict]:
    """Full sweep; deterministic row order regardless of ``jobs``."""
    tasks = [
        (cfg, si, ri)
        for si in range(len(cfg.sweep_points()))
        for ri in range(cfg.realizations)
    ]
    rows: list[dict] = []
    if jobs <= 1:
        for i, task in enumerate(tasks):
            rows.extend(_worker(task))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, result in enumerate(pool.map(_worker, tasks)):
                rows.extend(result)
                if progress:
                    progress(i + 1, len(tasks))
    return rows


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Boxplot statistics per (sweep point, method, metric), camera-averaged
    ("mean" scope) and per camera.

    The camera-averaged variant first averages each realization's errors over
    its cameras, then takes the distribution over realizations.  Rows from
    failed runs (no error values) are skipped.
    """
    sweep_keys = ("sweep_sigma2d", "sweep_sigma3d", "H", "J", "num_cameras")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[k] for k in sweep_keys) + (row["method"],)
        groups.setdefault(key, []).append(row)

    out: list[dict] = []
    for key in groups:
        group = [r for r in groups[key] if r["rotation_error_rad"] is not None]
        if not group:
            continue
        scopes: dict[str, dict[str, list[float]]] = {}
        by_realization: dict[int, list[dict]] = {}
        for row in group:
            scope = str(row["camera_id"])
            scopes.setdefault(scope, {m: [] for m in METRICS})
            for metric in METRICS:
                scopes[scope][metric].append(row[metric])
            by_realization.setdefault(row["realization"], []).append(row)
        mean_scope = {m: [] for m in METRICS}
        for realization in sorted(by_realization):
            cam_rows = by_realization[realization]
            for metric in METRICS:
                mean_scope[metric].append(float(np.mean([r[metric] for r in cam_rows])))
        scopes["mean"] = mean_scope

        for scope in sorted(scopes, key=lambda s: (s != "mean", s)):
            for metric in METRICS:
                stats = boxplot_stats(scopes[scope][metric])
                out.append(
                    {
                        **dict(zip(sweep_keys, key[:-1])),
                        "method": key[-1],
                        "camera": scope,
                        "metric": metric,
                        "median": stats.median,
                        "q1": stats.q1,
                        "q3": stats.q3,
                        "whisker_low": stats.whisker_low,
                        "whisker_high": stats.whisker_high,
                        "outliers": list(stats.outliers),
                    }
                )
    return out
