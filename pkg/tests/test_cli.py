import json
import subprocess
import sys

import numpy as np
import pytest

from rgbdcal import Pose, generate_dataset, pose_error, two_camera_rig
from rgbdcal.cli import main
from rgbdcal.fileio import pose_from_json, read_results_csv, write_dataset


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture()
def clean_dataset_path(tmp_path):
    d = generate_dataset(two_camera_rig(sigma_2d=0.0, sigma_3d=0.0, num_2d=20, num_3d=12, seed=3))
    path = tmp_path / "clean.json"
    write_dataset(d, str(path))
    return str(path), d


class TestSimulate:
    def test_deterministic_bytes(self, tmp_path):
        config = write_json(tmp_path / "cfg.json", {"preset": "two-cam", "num_2d": 10, "num_3d": 8})
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["simulate", config, "--seed", "42", "--out", str(out1)]) == 0
        assert main(["simulate", config, "--seed", "42", "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_small_h_rejected(self, tmp_path, capsys):
        config = write_json(tmp_path / "cfg.json", {"preset": "two-cam", "num_2d": 5})
        assert main(["simulate", config, "--out", str(tmp_path / "out.json")]) == 2
        assert "num_2d" in capsys.readouterr().err

    def test_four_camera_schema(self, tmp_path):
        config = write_json(tmp_path / "cfg.json", {"preset": "four-cam", "num_2d": 8, "num_3d": 6})
        out = tmp_path / "d.json"
        assert main(["simulate", config, "--seed", "1", "--out", str(out)]) == 0
        obj = json.loads(out.read_text())
        assert len(obj["cameras"]) == 4
        for modality, count in (("obs2d", 8), ("obs3d", 6)):
            seen = {(e["camera"], e["feature"]) for e in obj[modality]}
            assert seen == {(c, f) for c in (1, 2, 3, 4) for f in range(count)}

    def test_env_seed_precedence(self, tmp_path, monkeypatch):
        config = write_json(tmp_path / "cfg.json", {"preset": "two-cam", "num_2d": 10, "num_3d": 8, "seed": 1})
        out_env, out_flag, out_cfg = (tmp_path / n for n in ("env.json", "flag.json", "cfg_out.json"))
        monkeypatch.setenv("CALIB_SEED", "7")
        main(["simulate", config, "--out", str(out_env)])
        main(["simulate", config, "--seed", "7", "--out", str(out_flag)])
        assert out_env.read_bytes() == out_flag.read_bytes()
        monkeypatch.delenv("CALIB_SEED")
        main(["simulate", config, "--out", str(out_cfg)])
        assert out_cfg.read_bytes() != out_env.read_bytes()

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["simulate", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.json")]) == 3


class TestCalibrate:
    def test_init_recovers_ground_truth(self, clean_dataset_path, tmp_path):
        path, d = clean_dataset_path
        out = tmp_path / "poses.json"
        assert main(["calibrate", "--dataset", path, "--method", "init", "--out", str(out)]) == 0
        poses_doc = json.loads(out.read_text())
        gt = d.gt_poses()
        for entry, gt_pose in zip(poses_doc["poses"], gt):
            estimate = pose_from_json(entry)
            if np.linalg.norm(gt_pose.translation) == 0:
                continue
            err = pose_error(estimate, gt_pose)
            assert err.rotation_error < 1e-8
            assert err.translation_error_rel < 1e-9
        report = json.loads((tmp_path / "poses.report.json").read_text())
        assert report["method"] == "init"

    def test_joint_with_sigmas_reports_weight(self, clean_dataset_path, tmp_path):
        path, _ = clean_dataset_path
        out = tmp_path / "poses.json"
        code = main(
            ["calibrate", "--dataset", path, "--method", "joint", "--sigma2d", "1", "--sigma3d", "18",
             "--out", str(out)]
        )
        assert code == 0
        report = json.loads((tmp_path / "poses.report.json").read_text())
        assert report["w_used"] == 648.0
        assert "v_icp" in report and "v_ba" in report

    def test_flag_conflict(self, clean_dataset_path, tmp_path, capsys):
        path, _ = clean_dataset_path
        code = main(
            ["calibrate", "--dataset", path, "--method", "joint", "--w", "100", "--sigma2d", "1",
             "--out", str(tmp_path / "p.json")]
        )
        assert code == 2
        assert "conflict" in capsys.readouterr().err

    def test_joint_needs_weight_information(self, clean_dataset_path, tmp_path):
        path, _ = clean_dataset_path
        assert main(["calibrate", "--dataset", path, "--method", "joint", "--out", str(tmp_path / "p.json")]) == 2

    def test_baicp_needs_c(self, clean_dataset_path, tmp_path):
        path, _ = clean_dataset_path
        assert main(["calibrate", "--dataset", path, "--method", "baicp-plus", "--out", str(tmp_path / "p.json")]) == 2

    def test_c_rejected_elsewhere(self, clean_dataset_path, tmp_path):
        path, _ = clean_dataset_path
        assert main(["calibrate", "--dataset", path, "--method", "ba", "--c", "0.5", "--out", str(tmp_path / "p.json")]) == 2

    def test_joint_auto_runs(self, tmp_path):
        d = generate_dataset(two_camera_rig(num_2d=30, num_3d=20, seed=5))
        path = tmp_path / "noisy.json"
        write_dataset(d, str(path))
        out = tmp_path / "poses.json"
        code = main(["calibrate", "--dataset", str(path), "--method", "joint-auto", "--out", str(out)])
        assert code == 0
        report = json.loads((tmp_path / "poses.report.json").read_text())
        assert report["w_used"] > 0
        assert report["outer_iterations"] >= 2


class TestExperiment:
    def _config(self, tmp_path, **extra):
        obj = {
            "preset": "two-cam",
            "num_2d": 15,
            "num_3d": 10,
            "sweep": {"sigma2d": [0.5, 1.0]},
            "realizations": 2,
            "methods": ["init", "icp"],
            "base_seed": 9,
        }
        obj.update(extra)
        return write_json(tmp_path / "exp.json", obj)

    def test_row_count(self, tmp_path):
        config = self._config(tmp_path)
        out = tmp_path / "r.csv"
        assert main(["experiment", config, "--out-csv", str(out)]) == 0
        rows = read_results_csv(str(out))
        assert len(rows) == 2 * 2 * 2  # sweep points x realizations x methods (1 camera)

    def test_jobs_do_not_change_bytes(self, tmp_path):
        config = self._config(tmp_path)
        out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert main(["experiment", config, "--out-csv", str(out1), "--jobs", "1"]) == 0
        assert main(["experiment", config, "--out-csv", str(out2), "--jobs", "4"]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_bad_method_rejected(self, tmp_path):
        config = self._config(tmp_path, methods=["warp"])
        assert main(["experiment", config, "--out-csv", str(tmp_path / "r.csv")]) == 2


class TestReport:
    def test_round_trip_aggregation(self, tmp_path):
        config = TestExperiment()._config(tmp_path)
        csv_path = tmp_path / "r.csv"
        main(["experiment", config, "--out-csv", str(csv_path)])
        out = tmp_path / "agg.json"
        assert main(["report", "--in-csv", str(csv_path), "--out", str(out)]) == 0
        agg = json.loads(out.read_text())
        assert {row["metric"] for row in agg} == {"rotation_error_rad", "translation_error_rel"}
        assert {row["camera"] for row in agg} == {"mean", "2"}

    def test_hand_built_quartiles(self, tmp_path):
        from rgbdcal.fileio import RESULTS_HEADER, write_results_csv

        rows = []
        for i, value in enumerate([1.0, 2.0, 3.0, 4.0, 100.0]):
            rows.append(
                {
                    "sweep_sigma2d": 1.0, "sweep_sigma3d": 18.0, "H": 10, "J": 10,
                    "num_cameras": 2, "realization": i, "method": "ba", "camera_id": 2,
                    "rotation_error_rad": value, "translation_error_rel": value / 10.0,
                    "final_cost": None, "iterations": None, "w_used": None,
                    "sigma2d_sq_est": None, "sigma3d_sq_est": None, "converged": True,
                }
            )
        csv_path = tmp_path / "r.csv"
        write_results_csv(rows, str(csv_path))
        out = tmp_path / "agg.json"
        assert main(["report", "--in-csv", str(csv_path), "--out", str(out)]) == 0
        agg = json.loads(out.read_text())
        rot = next(r for r in agg if r["metric"] == "rotation_error_rad" and r["camera"] == "2")
        assert rot["median"] == 3.0 and rot["q1"] == 2.0 and rot["q3"] == 4.0
        assert rot["outliers"] == [100.0]

    def test_malformed_csv_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n")
        assert main(["report", "--in-csv", str(bad), "--out", str(tmp_path / "a.json")]) == 2


class TestConsoleEntryPoint:
    def test_module_invocation(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"preset": "two-cam", "num_2d": 8, "num_3d": 6}))
        out = tmp_path / "d.json"
        proc = subprocess.run(
            [sys.executable, "-m", "rgbdcal.cli", "simulate", str(config), "--seed", "1", "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
