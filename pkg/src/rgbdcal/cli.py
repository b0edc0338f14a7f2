"""Command-line interface.

Subcommands::

    rgbdcal simulate CONFIG --out DATASET [--seed N]
    rgbdcal calibrate --dataset DATASET --method M [method flags] --out POSES
    rgbdcal experiment CONFIG --out-csv RESULTS [--jobs N]
    rgbdcal report --in-csv RESULTS --out TABLE

Exit codes: 0 success, 2 usage/validation error, 3 I/O error, 4 solver
stopped at the iteration limit (results still written), 5 numerical failure.

Seed precedence: command-line flag, then the CALIB_SEED environment
variable, then the config file value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import autoweight as aw
from . import fileio
from .costs import ParameterBlock, init_structure, joint_cost, weight_from_variances
from .dlt import initialize_all
from .evaluation import aggregate_rows, run_experiment
from .exceptions import (
    CalibrationError,
    DegenerateConfiguration,
    InsufficientPoints,
    JacobianMismatch,
    MissingCorrespondence,
    NonFiniteCost,
    PointBehindCamera,
    SingularSystem,
    VisibilityExhausted,
)
from .scene import generate_dataset
from .solver import Objective, SolverOptions, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MAX_ITER = 4
EXIT_NUMERICAL = 5

_VALIDATION_ERRORS = (ValueError, MissingCorrespondence, InsufficientPoints, VisibilityExhausted)
_NUMERICAL_ERRORS = (
    SingularSystem,
    DegenerateConfiguration,
    NonFiniteCost,
    JacobianMismatch,
    PointBehindCamera,
)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_seed(flag_value, config_value):
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("CALIB_SEED")
    if env is not None:
        return int(env)
    return config_value


def cmd_simulate(args: argparse.Namespace) -> int:
    config = fileio.scene_config_from_json(_load_json(args.config))
    seed = _resolve_seed(args.seed, config.seed)
    if seed != config.seed:
        config = replace(config, seed=int(seed))
    dataset = generate_dataset(config)
    fileio.write_dataset(dataset, args.out)
    return EXIT_OK


def _check_calibrate_flags(method: str, args: argparse.Namespace) -> None:
    has_sigmas = args.sigma2d is not None or args.sigma3d is not None
    if method == "joint":
        if args.w is not None and has_sigmas:
            raise ValueError("--w conflicts with --sigma2d/--sigma3d")
        if args.w is None and not (args.sigma2d is not None and args.sigma3d is not None):
            raise ValueError("--method joint needs --w or both --sigma2d and --sigma3d")
    elif args.w is not None or has_sigmas:
        raise ValueError(f"--w/--sigma2d/--sigma3d only apply to --method joint, not {method}")
    if method == "baicp-plus":
        if args.c is None:
            raise ValueError("--method baicp-plus needs --c")
    elif args.c is not None:
        raise ValueError(f"--c only applies to --method baicp-plus, not {method}")


def cmd_calibrate(args: argparse.Namespace) -> int:
    method = args.method
    _check_calibrate_flags(method, args)
    dataset = fileio.read_dataset(args.dataset)
    poses0 = initialize_all(dataset)
    s0 = ParameterBlock(poses0[1:], init_structure(dataset, poses0))
    estimator = args.estimator.replace("-", "_")

    report: dict = {"method": method}
    converged = True
    if method == "init":
        block = s0
    elif method == "joint-auto":
        opts = aw.AutoWeightOptions(estimator_mode=estimator)
        block, w, auto_report = aw.calibrate_auto(s0, dataset, opts)
        last = auto_report.inner_reports[-1]
        converged = auto_report.w_converged and all(r.converged for r in auto_report.inner_reports)
        report.update(
            w_used=w,
            sigma2d_sq_est=auto_report.sigma2d_sq_trace[-1],
            sigma3d_sq_est=auto_report.sigma3d_sq_trace[-1],
            outer_iterations=auto_report.outer_iterations,
            iterations=sum(r.iterations for r in auto_report.inner_reports),
            initial_cost=auto_report.inner_reports[0].initial_cost,
            final_cost=last.final_cost,
            w_trace=auto_report.w_trace,
        )
    else:
        if method == "ba":
            objective = Objective.ba()
        elif method == "icp":
            objective = Objective.icp()
        elif method == "joint":
            w = args.w if args.w is not None else weight_from_variances(args.sigma3d**2, args.sigma2d**2)
            objective = Objective.joint(w)
            report["w_used"] = w
        else:
            objective = Objective.baicp_plus(args.c)
            report["c"] = args.c
        block, solve_report = solve(objective, s0, dataset, SolverOptions())
        converged = solve_report.converged
        report.update(
            iterations=solve_report.iterations,
            initial_cost=solve_report.initial_cost,
            final_cost=solve_report.final_cost,
            termination_reason=solve_report.termination_reason,
        )

    if "w_used" in report:
        breakdown = joint_cost(block, dataset, report["w_used"])
        report.update(v_icp=breakdown.v_icp, v_ba=breakdown.v_ba, v_total=breakdown.v_total)
    report["converged"] = converged

    poses_doc = {
        "poses": [
            {"camera": camera.id, **fileio.pose_to_json(pose)}
            for camera, pose in zip(dataset.cameras, block.all_poses())
        ]
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(poses_doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    report_path = args.report_out or args.out.removesuffix(".json") + ".report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, allow_nan=False)
        fh.write("\n")
    return EXIT_OK if converged else EXIT_MAX_ITER


def cmd_experiment(args: argparse.Namespace) -> int:
    obj = _load_json(args.config)
    cfg = fileio.experiment_config_from_json(obj)
    env_seed = _resolve_seed(None, cfg.base_seed)
    if env_seed != cfg.base_seed:
        cfg = replace(cfg, base_seed=int(env_seed))

    def progress(done: int, total: int) -> None:
        print(f"\r{done}/{total} runs", end="" if done < total else "\n", file=sys.stderr, flush=True)

    rows = run_experiment(cfg, jobs=args.jobs, progress=progress)
    fileio.write_results_csv(rows, args.out_csv)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = fileio.read_results_csv(args.in_csv)
    fileio.write_aggregate(aggregate_rows(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdcal", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset file")
    p.add_argument("config", help="scene config JSON (preset name or explicit cameras)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate poses from a dataset file")
    p.add_argument("--dataset", required=True)
    p.add_argument(
        "--method",
        required=True,
        choices=["init", "ba", "icp", "joint", "joint-auto", "baicp-plus"],
    )
    p.add_argument("--w", type=float, default=None, help="joint weight (mm^2/px^2)")
    p.add_argument("--sigma2d", type=float, default=None, help="2D noise std, pixels")
    p.add_argument("--sigma3d", type=float, default=None, help="3D noise std, mm")
    p.add_argument("--c", type=float, default=None, help="blend factor for baicp-plus")
    p.add_argument("--estimator", choices=["consistent", "paper-literal"], default="consistent")
    p.add_argument("--out", required=True, help="output poses JSON path")
    p.add_argument("--report-out", default=None, help="report path (default: <out>.report.json)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("experiment", help="run a multi-realization sweep")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate a results CSV into boxplot statistics")
    p.add_argument("--in-csv", required=True)
    p.add_argument("--out", required=True, help="output table (.json or .csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        return _fail(EXIT_USAGE, str(exc))
    except _NUMERICAL_ERRORS as exc:
        return _fail(EXIT_NUMERICAL, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except CalibrationError as exc:
        return _fail(EXIT_NUMERICAL, str(exc))


if __name__ == "__main__":
    sys.exit(main())
