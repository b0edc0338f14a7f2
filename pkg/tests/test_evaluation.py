import math

import numpy as np
import numpy.testing as npt
import pytest

from rgbdcal import (
    ExperimentConfig,
    Pose,
    PoseError,
    aggregate_rows,
    boxplot_stats,
    compose,
    mean_pose_error,
    pose_error,
    run_experiment,
    two_camera_rig,
)
from rgbdcal.evaluation import realization_seed
from rgbdcal.exceptions import GaugeCamera
from rgbdcal.geometry import rotation_z

from conftest import random_pose


class TestPoseError:
    def test_exact_estimate(self):
        gt = Pose(rotation_z(0.4), [100.0, 50.0, 0.0])
        err = pose_error(gt, gt)
        assert err.rotation_error == 0.0
        assert err.translation_error_rel == 0.0

    def test_pure_rotation_offset(self):
        gt = Pose(rotation_z(0.4), [100.0, 0.0, 0.0])
        estimate = Pose(gt.rotation @ rotation_z(0.1), gt.translation)
        err = pose_error(estimate, gt)
        assert err.rotation_error == pytest.approx(0.1, abs=1e-12)
        assert err.translation_error_rel == 0.0

    def test_translation_offset(self):
        gt = Pose(np.eye(3), [1000.0, 0.0, 0.0])
        estimate = Pose(np.eye(3), [990.0, 0.0, 0.0])
        err = pose_error(estimate, gt)
        assert err.rotation_error == 0.0
        assert err.translation_error_rel == pytest.approx(0.01)

    def test_gauge_camera_rejected(self):
        with pytest.raises(GaugeCamera):
            pose_error(Pose.identity(), Pose.identity())

    def test_rotation_error_gauge_consistent(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gt, est, g = (random_pose(rng) for _ in range(3))
            base = pose_error(est, gt).rotation_error
            moved = pose_error(compose(g, est), compose(g, gt)).rotation_error
            assert moved == pytest.approx(base, abs=1e-9)


class TestMeanPoseError:
    def test_single_camera_identity(self):
        e = PoseError(0.5, 0.25)
        assert mean_pose_error([e]) == e

    def test_two_values(self):
        m = mean_pose_error([PoseError(0.1, 0.0), PoseError(0.3, 0.0)])
        assert m.rotation_error == pytest.approx(0.2)

    def test_four_cameras_hand_mean(self):
        errors = [PoseError(0.1, 0.01), PoseError(0.2, 0.02), PoseError(0.4, 0.04)]
        m = mean_pose_error(errors)
        assert m.rotation_error == pytest.approx(0.7 / 3.0)
        assert m.translation_error_rel == pytest.approx(0.07 / 3.0)


class TestBoxplotStats:
    def test_hand_case_with_outlier(self):
        # linear-interpolation quartiles of [1,2,3,4,100]: q1=2, med=3, q3=4;
        # IQR=2, fences [-1, 7]: 100 is the only outlier
        s = boxplot_stats([1.0, 2.0, 3.0, 4.0, 100.0])
        assert s.median == 3.0
        assert s.q1 == 2.0
        assert s.q3 == 4.0
        assert s.whisker_low == 1.0
        assert s.whisker_high == 4.0
        assert s.outliers == (100.0,)

    def test_all_equal(self):
        s = boxplot_stats([7.0, 7.0, 7.0])
        assert s.median == s.q1 == s.q3 == 7.0
        assert s.outliers == ()

    def test_single_sample(self):
        s = boxplot_stats([42.0])
        assert (s.median, s.q1, s.q3, s.whisker_low, s.whisker_high) == (42.0,) * 5

    def test_shift_moves_median_exactly(self):
        rng = np.random.default_rng(1)
        data = rng.uniform(0, 10, 31)
        c = 12.5
        assert boxplot_stats(data + c).median == pytest.approx(boxplot_stats(data).median + c, abs=1e-12)

    def test_quartile_ordering_invariant(self):
        rng = np.random.default_rng(2)
        for n in (1, 2, 3, 10, 51):
            s = boxplot_stats(rng.uniform(-5, 5, n))
            assert s.q1 <= s.median <= s.q3
            assert s.whisker_low <= s.q1 and s.q3 <= s.whisker_high


class TestExperimentConfig:
    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError, match="unknown methods"):
            ExperimentConfig(scene=two_camera_rig(), methods=("magic",))

    def test_rejects_empty_methods(self):
        with pytest.raises(ValueError, match="method"):
            ExperimentConfig(scene=two_camera_rig(), methods=())

    def test_sweep_points_product_order(self):
        cfg = ExperimentConfig(
            scene=two_camera_rig(),
            methods=("init",),
            sweep_sigma2d=(0.2, 1.0),
            sweep_sigma3d=(6.0, 18.0),
        )
        points = cfg.sweep_points()
        assert len(points) == 4
        assert points[0] == {"sigma_2d": 0.2, "sigma_3d": 6.0, "num_2d": 100, "num_3d": 100}
        assert points[1]["sigma_3d"] == 18.0

    def test_seed_derivation_distinct(self):
        seeds = {realization_seed(1, si, ri) for si in range(3) for ri in range(10)}
        assert len(seeds) == 30


class TestRunExperiment:
    def test_noise_free_init_is_exact(self):
        cfg = ExperimentConfig(
            scene=two_camera_rig(sigma_2d=0.0, sigma_3d=0.0),
            methods=("init",),
            realizations=3,
            base_seed=5,
        )
        rows = run_experiment(cfg)
        assert len(rows) == 3
        for row in rows:
            assert row["rotation_error_rad"] < 1e-8
            assert row["translation_error_rel"] < 1e-9
            assert row["converged"] is True

    def test_row_counting_default_sweep(self):
        cfg = ExperimentConfig(
            scene=two_camera_rig(num_2d=20, num_3d=12),
            methods=("init", "icp"),
            sweep_sigma2d=(0.2, 0.6, 1.0, 1.4, 1.8),
            realizations=2,
            base_seed=7,
        )
        rows = run_experiment(cfg)
        assert len(rows) == 5 * 2 * 2 * 1  # sweep x realizations x methods x cameras

    def test_deterministic(self):
        cfg = ExperimentConfig(
            scene=two_camera_rig(num_2d=15, num_3d=10),
            methods=("init", "icp"),
            realizations=2,
            base_seed=11,
        )
        assert run_experiment(cfg) == run_experiment(cfg)

    def test_methods_share_initialization(self):
        # init rows record the same errors the refinements start from, so a
        # noise-free run must agree across methods
        cfg = ExperimentConfig(
            scene=two_camera_rig(sigma_2d=0.0, sigma_3d=0.0, num_2d=12, num_3d=8),
            methods=("init", "ba", "icp", "joint_known_w", "joint_auto", "baicp_plus"),
            realizations=1,
            base_seed=3,
        )
        rows = run_experiment(cfg)
        assert len(rows) == 6
        for row in rows:
            assert row["rotation_error_rad"] < 1e-8
            assert row["translation_error_rel"] < 1e-9


class TestAggregateRows:
    def test_mean_and_per_camera_scopes(self):
        cfg = ExperimentConfig(
            scene=two_camera_rig(num_2d=15, num_3d=10),
            methods=("init",),
            realizations=4,
            base_seed=13,
        )
        agg = aggregate_rows(run_experiment(cfg))
        scopes = {row["camera"] for row in agg}
        assert scopes == {"mean", "2"}
        metrics = {row["metric"] for row in agg}
        assert metrics == {"rotation_error_rad", "translation_error_rel"}

    def test_failed_rows_skipped(self):
        rows = [
            {
                "sweep_sigma2d": 1.0, "sweep_sigma3d": 18.0, "H": 10, "J": 10,
                "num_cameras": 2, "realization": 0, "method": "ba", "camera_id": 2,
                "rotation_error_rad": None, "translation_error_rel": None,
                "final_cost": None, "iterations": None, "w_used": None,
                "sigma2d_sq_est": None, "sigma3d_sq_est": None, "converged": False,
            }
        ]
        assert aggregate_rows(rows) == []
