"""File formats: dataset JSON, scene/experiment configs, and results CSV.

Dataset files are JSON (version "1").  Observation entries are ordered
camera-major then feature-major, and numbers use Python's shortest
round-trip representation, so write -> read -> write is byte-identical.
NaN/Inf are rejected on both paths.

Results are flat CSV, one row per (run, non-gauge camera), floats printed
with 17 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .evaluation import METHODS, ExperimentConfig
from .geometry import Intrinsics, Pose, exp_axis_angle
from .scene import CameraSpec, Dataset, Region, SceneConfig, preset_config

RESULTS_HEADER = [
    "sweep_sigma2d",
    "sweep_sigma3d",
    "H",
    "J",
    "num_cameras",
    "realization",
    "method",
    "camera_id",
    "rotation_error_rad",
    "translation_error_rel",
    "final_cost",
    "iterations",
    "w_used",
    "sigma2d_sq_est",
    "sigma3d_sq_est",
    "converged",
]

AGGREGATE_HEADER = [
    "sweep_sigma2d",
    "sweep_sigma3d",
    "H",
    "J",
    "num_cameras",
    "method",
    "camera",
    "metric",
    "median",
    "q1",
    "q3",
    "whisker_low",
    "whisker_high",
    "outliers",
]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _finite_list(values, count: int, context: str) -> list[float]:
    values = list(values)
    _require(len(values) == count, f"{context}: expected {count} numbers")
    out = [float(v) for v in values]
    _require(all(math.isfinite(v) for v in out), f"{context}: non-finite value")
    return out


# --------------------------------------------------------------------------
# Pose / camera encoding
# --------------------------------------------------------------------------


# Parsed poses remember the exact axis-angle they came from; the matrix
# log/exp pair is not bit-idempotent, and write -> read -> write must be.
_WIRE_AXIS_ANGLE = "_wire_axis_angle"


def pose_to_json(pose: Pose) -> dict:
    cached = getattr(pose, _WIRE_AXIS_ANGLE, None)
    axis_angle = list(cached) if cached is not None else [float(v) for v in pose.axis_angle()]
    return {"axis_angle": axis_angle, "t": [float(v) for v in pose.translation]}


def pose_from_json(obj: dict, context: str = "pose") -> Pose:
    axis_angle = _finite_list(obj["axis_angle"], 3, f"{context}.axis_angle")
    t = _finite_list(obj["t"], 3, f"{context}.t")
    pose = Pose(exp_axis_angle(np.array(axis_angle)), np.array(t))
    object.__setattr__(pose, _WIRE_AXIS_ANGLE, tuple(axis_angle))
    return pose


def _camera_to_json(camera: CameraSpec) -> dict:
    k = camera.intrinsics
    out = {
        "id": camera.id,
        "intrinsics": {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
        },
    }
    if camera.gt_pose is not None:
        out["gt_pose"] = pose_to_json(camera.gt_pose)
    return out


def _camera_from_json(obj: dict) -> CameraSpec:
    k = obj["intrinsics"]
    intrinsics = Intrinsics(
        fx=float(k["fx"]), fy=float(k["fy"]), cx=float(k["cx"]), cy=float(k["cy"]),
        width=int(k["width"]), height=int(k["height"]),
    )
    gt_pose = None
    if "gt_pose" in obj and obj["gt_pose"] is not None:
        gt_pose = pose_from_json(obj["gt_pose"], f"camera {obj['id']} gt_pose")
    return CameraSpec(id=int(obj["id"]), intrinsics=intrinsics, gt_pose=gt_pose)


# --------------------------------------------------------------------------
# Dataset file
# --------------------------------------------------------------------------


def dataset_to_json(d: Dataset) -> dict:
    obs2d = []
    for l, camera in enumerate(d.cameras):
        for i, feature in enumerate(d.ids2d):
            entry = {"camera": camera.id, "feature": int(feature), "uv": [float(v) for v in d.obs2d[l, i]]}
            if d.obs2d_xyz is not None and np.all(np.isfinite(d.obs2d_xyz[l, i])):
                entry["xyz"] = [float(v) for v in d.obs2d_xyz[l, i]]
            obs2d.append(entry)
    obs3d = [
        {"camera": camera.id, "feature": int(feature), "xyz": [float(v) for v in d.obs3d[l, i]]}
        for l, camera in enumerate(d.cameras)
        for i, feature in enumerate(d.ids3d)
    ]
    out = {"version": "1", "cameras": [_camera_to_json(c) for c in d.cameras], "obs2d": obs2d, "obs3d": obs3d}
    if d.true_points_2d is not None:
        out["true_points"] = [
            {"feature": int(f), "xyz": [float(v) for v in p]} for f, p in zip(d.ids2d, d.true_points_2d)
        ]
    if d.true_points_3d is not None:
        out["true_points_3d"] = [
            {"feature": int(f), "xyz": [float(v) for v in p]} for f, p in zip(d.ids3d, d.true_points_3d)
        ]
    if d.noise is not None:
        out["noise"] = {"sigma2d": float(d.noise[0]), "sigma3d": float(d.noise[1])}
    return out


def _collect_observations(entries, camera_ids: list[int], dim_key: str, dim: int, modality: str):
    """Group per-camera observations; every feature must appear in every camera."""
    per_camera: dict[int, dict[int, list[float]]] = {cid: {} for cid in camera_ids}
    extras: dict[int, dict[int, list[float]]] = {cid: {} for cid in camera_ids}
    for i, entry in enumerate(entries):
        context = f"{modality}[{i}]"
        cid = int(entry["camera"])
        _require(cid in per_camera, f"{context}: unknown camera id {cid}")
        feature = int(entry["feature"])
        _require(feature not in per_camera[cid], f"{context}: duplicate (camera {cid}, feature {feature})")
        per_camera[cid][feature] = _finite_list(entry[dim_key], dim, f"{context}.{dim_key}")
        if modality == "obs2d" and "xyz" in entry:
            extras[cid][feature] = _finite_list(entry["xyz"], 3, f"{context}.xyz")
    id_sets = [set(per_camera[cid]) for cid in camera_ids]
    _require(all(s == id_sets[0] for s in id_sets), f"{modality}: every feature id must appear in every camera")
    _require(len(id_sets[0]) > 0, f"{modality}: no observations")
    ids = sorted(id_sets[0])
    data = np.array([[per_camera[cid][f] for f in ids] for cid in camera_ids])
    return np.array(ids), data, extras


def dataset_from_json(obj: dict) -> Dataset:
    _require(obj.get("version") == "1", 'dataset version must be "1"')
    cameras = [_camera_from_json(c) for c in obj["cameras"]]
    camera_ids = [c.id for c in cameras]
    _require(camera_ids == sorted(camera_ids), "cameras must be listed in id order")
    _require(camera_ids == list(range(1, len(camera_ids) + 1)), "camera ids must be contiguous from 1")
    ids2d, obs2d, extras = _collect_observations(obj["obs2d"], camera_ids, "uv", 2, "obs2d")
    ids3d, obs3d, _ = _collect_observations(obj["obs3d"], camera_ids, "xyz", 3, "obs3d")

    obs2d_xyz = None
    if any(extras[cid] for cid in camera_ids):
        obs2d_xyz = np.full((len(cameras), len(ids2d), 3), np.nan)
        for l, cid in enumerate(camera_ids):
            for i, feature in enumerate(ids2d):
                if feature in extras[cid]:
                    obs2d_xyz[l, i] = extras[cid][feature]

    def point_table(key: str, ids: np.ndarray):
        if key not in obj:
            return None
        table = {int(e["feature"]): _finite_list(e["xyz"], 3, key) for e in obj[key]}
        _require(set(table) == set(int(i) for i in ids), f"{key}: feature ids must match observations")
        return np.array([table[int(f)] for f in ids])

    noise = None
    if "noise" in obj and obj["noise"] is not None:
        noise = (float(obj["noise"]["sigma2d"]), float(obj["noise"]["sigma3d"]))

    d = Dataset(
        cameras=cameras,
        ids2d=ids2d,
        obs2d=obs2d,
        obs2d_xyz=obs2d_xyz,
        ids3d=ids3d,
        obs3d=obs3d,
        true_points_2d=point_table("true_points", ids2d),
        true_points_3d=point_table("true_points_3d", ids3d),
        noise=noise,
    )
    d.validate()
    return d


def write_dataset(d: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_json(d), fh, indent=1, allow_nan=False)
        fh.write("\n")


def read_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON: {exc}") from exc
    return dataset_from_json(obj)


def _reject_constant(name: str):
    raise ValueError(f"non-finite JSON token {name!r} not allowed")


# --------------------------------------------------------------------------
# Scene / experiment configuration
# --------------------------------------------------------------------------


def scene_config_from_json(obj: dict) -> SceneConfig:
    """Scene config from a preset name plus overrides, or explicit cameras."""
    overrides = {
        "num_2d": obj.get("num_2d"),
        "num_3d": obj.get("num_3d"),
        "sigma_2d": obj.get("sigma2d"),
        "sigma_3d": obj.get("sigma3d"),
        "seed": obj.get("seed"),
    }
    if "region" in obj:
        region = obj["region"]
        overrides["region"] = Region(
            lo=_finite_list(region["lo"], 3, "region.lo"), hi=_finite_list(region["hi"], 3, "region.hi")
        )
    if "cameras" in obj:
        overrides["cameras"] = tuple(_camera_from_json(c) for c in obj["cameras"])

    if "preset" in obj:
        return preset_config(obj["preset"], **overrides)
    _require("cameras" in obj and "region" in obj, "config needs either a preset or cameras + region")
    defaults = {"num_2d": 100, "num_3d": 100, "sigma_2d": 1.0, "sigma_3d": 18.0, "seed": 0}
    merged = {**defaults, **{k: v for k, v in overrides.items() if v is not None}}
    return SceneConfig(**merged)


def experiment_config_from_json(obj: dict) -> ExperimentConfig:
    scene = scene_config_from_json(obj.get("scene", obj))
    sweep = obj.get("sweep", {})
    methods = obj.get("methods", list(METHODS))
    return ExperimentConfig(
        scene=scene,
        methods=tuple(methods),
        sweep_sigma2d=tuple(sweep.get("sigma2d", ())),
        sweep_sigma3d=tuple(sweep.get("sigma3d", ())),
        sweep_num_2d=tuple(sweep.get("num_2d", ())),
        sweep_num_3d=tuple(sweep.get("num_3d", ())),
        realizations=int(obj.get("realizations", 50)),
        base_seed=int(obj.get("base_seed", 0)),
        baicp_c=float(obj.get("baicp_c", 0.5)),
        estimator_mode=obj.get("estimator", "consistent"),
    )


# --------------------------------------------------------------------------
# Results CSV
# --------------------------------------------------------------------------

_FLOAT_COLUMNS = {
    "sweep_sigma2d",
    "sweep_sigma3d",
    "rotation_error_rad",
    "translation_error_rel",
    "final_cost",
    "w_used",
    "sigma2d_sq_est",
    "sigma3d_sq_est",
}
_INT_COLUMNS = {"H", "J", "num_cameras", "realization", "camera_id", "iterations"}


def _format_cell(column: str, value) -> str:
    if value is None:
        return ""
    if column == "converged":
        return "true" if value else "false"
    if column in _FLOAT_COLUMNS:
        return format(float(value), ".17g")
    if column in _INT_COLUMNS:
        return str(int(value))
    return str(value)


def results_to_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    for row in rows:
        writer.writerow([_format_cell(col, row.get(col)) for col in RESULTS_HEADER])
    return buf.getvalue()


def write_results_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(results_to_csv_text(rows))


def _parse_cell(column: str, text: str, context: str):
    if text == "":
        return None
    try:
        if column == "converged":
            if text not in ("true", "false"):
                raise ValueError(f"bad boolean {text!r}")
            return text == "true"
        if column in _FLOAT_COLUMNS:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("non-finite value")
            return value
        if column in _INT_COLUMNS:
            return int(text)
        return text
    except ValueError as exc:
        raise ValueError(f"{context}: column {column!r}: {exc}") from exc


def read_results_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty results file") from None
        _require(header == RESULTS_HEADER, f"bad header: expected {RESULTS_HEADER}, got {header}")
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            _require(len(record) == len(RESULTS_HEADER), f"row {line_no}: expected {len(RESULTS_HEADER)} fields")
            rows.append(
                {col: _parse_cell(col, cell, f"row {line_no}") for col, cell in zip(RESULTS_HEADER, record)}
            )
    return rows


def write_aggregate(rows: list[dict], path: str) -> None:
    """Boxplot-stats table; JSON if the path ends in .json, else CSV."""
    if path.endswith(".json"):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1, allow_nan=False)
            fh.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for row in rows:
            record = []
            for col in AGGREGATE_HEADER:
                value = row[col]
                if col == "outliers":
                    record.append(";".join(format(v, ".17g") for v in value))
                elif isinstance(value, float):
                    record.append(format(value, ".17g"))
                else:
                    record.append(str(value))
            writer.writerow(record)
