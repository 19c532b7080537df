import math

import numpy as np
import pytest

from jcas_lab.errors import ParameterError
from jcas_lab.montecarlo import (
    empirical_block_distortion,
    expected_covariance_mc,
    mc_report_csv_row,
    tracking_loss_monitor,
    write_per_step_csv,
)
from jcas_lab.riccati import BeamPolicy, mb_fixed_point
from jcas_lab.statespace import GaussMarkovModel

from conftest import quad_mb_root


class TestExpectedCovarianceMc:
    def test_always_sensing_is_exact(self, unstable_model):
        rep = expected_covariance_mc(unstable_model, 1.0, 50, 500, seed=1, critical=math.nan)
        assert rep.std_error == 0.0
        assert rep.empirical_mean_trace == rep.v_bound_trace
        assert rep.verdict == "within"

    def test_never_sensing_is_exact(self, stable_model):
        rep = expected_covariance_mc(stable_model, 0.0, 50, 300, seed=2, critical=math.nan)
        assert rep.std_error == 0.0
        assert rep.empirical_mean_trace == rep.s_bound_trace
        assert rep.empirical_mean_trace == rep.v_bound_trace
        assert rep.verdict == "within"

    def test_sandwich_mid_lambda(self, unstable_model, stable_model):
        for model in (unstable_model, stable_model):
            rep = expected_covariance_mc(model, 0.5, 30, 2000, seed=3, critical=math.nan)
            lo, hi = rep.band()
            assert lo <= rep.empirical_mean_trace <= hi
            assert rep.verdict == "within"

    def test_deterministic_and_worker_invariant(self, unstable_model):
        a = expected_covariance_mc(unstable_model, 0.6, 25, 400, seed=9, critical=math.nan)
        b = expected_covariance_mc(unstable_model, 0.6, 25, 400, seed=9, critical=math.nan)
        c = expected_covariance_mc(
            unstable_model, 0.6, 25, 400, seed=9, critical=math.nan, threads=4
        )
        assert a.empirical_mean_trace == b.empirical_mean_trace == c.empirical_mean_trace
        assert a.std_error == b.std_error == c.std_error

    def test_single_trial_infinite_band(self, stable_model):
        rep = expected_covariance_mc(stable_model, 0.5, 10, 1, seed=4, critical=math.nan)
        assert rep.infinite_band
        assert math.isinf(rep.std_error)
        assert rep.verdict == "within"

    def test_matrix_model_runs(self, matrix_model):
        rep = expected_covariance_mc(matrix_model, 0.5, 20, 200, seed=5, critical=math.nan)
        assert rep.verdict == "within"

    def test_near_critical_flag(self, unstable_model):
        lam_c = 1.0 - 1.0 / 1.15**2
        hot = expected_covariance_mc(unstable_model, 0.26, 10, 50, seed=6, critical=lam_c)
        cold = expected_covariance_mc(unstable_model, 0.9, 10, 50, seed=6, critical=lam_c)
        assert hot.near_critical and not cold.near_critical

    def test_lambda_validated(self, stable_model):
        with pytest.raises(ParameterError):
            expected_covariance_mc(stable_model, 1.2, 10, 10, seed=0)

    def test_per_step_traces(self, stable_model, tmp_path):
        rep = expected_covariance_mc(
            stable_model, 0.5, 15, 100, seed=7, per_step=True, critical=math.nan
        )
        assert len(rep.per_step_mean) == 16
        assert rep.per_step_s[0] == rep.per_step_v[0] == rep.per_step_mean[0]
        path = tmp_path / "steps.csv"
        write_per_step_csv(rep, path, comment="test")
        lines = path.read_text().strip().split("\n")
        assert lines[1] == "i,mean_trace,s_bound,v_bound"
        assert len(lines) == 2 + 16

    def test_csv_row_fields(self, stable_model):
        rep = expected_covariance_mc(stable_model, 0.5, 10, 50, seed=8, critical=math.nan)
        row = mc_report_csv_row(rep)
        assert row.split(",")[7] == "within"


class TestBlockDistortion:
    def test_noiseless_perfect_init(self):
        model = GaussMarkovModel.scalar(-0.95, 1.0, 0.0, 1e-12)
        rep = empirical_block_distortion(
            model, BeamPolicy.switching(1.0), 50, 20, seed=1, s0_mean=[0.0], s0_cov=[[0.0]]
        )
        assert rep.mean < 1e-12

    def test_always_sensing_matches_steady_state(self, stable_model):
        fp = quad_mb_root(-0.95, 1.0, 0.2, 1.5, 1.0)
        rep = empirical_block_distortion(
            stable_model,
            BeamPolicy.switching(1.0),
            800,
            300,
            seed=2,
            s0_mean=[0.0],
            s0_cov=[[fp]],
        )
        assert abs(rep.mean - fp) <= 3.0 * rep.std_error

    def test_multibeam_matches_steady_state(self, stable_model):
        fp = float(np.trace(mb_fixed_point(2.0, stable_model)))
        rep = empirical_block_distortion(
            stable_model,
            BeamPolicy.multibeam(2.0),
            800,
            300,
            seed=3,
            s0_mean=[0.0],
            s0_cov=[[fp]],
        )
        assert abs(rep.mean - fp) <= 3.0 * rep.std_error

    def test_deterministic(self, stable_model):
        kw = dict(s0_mean=[0.0], s0_cov=[[1.0]])
        a = empirical_block_distortion(stable_model, BeamPolicy.multibeam(2.0), 50, 40, 5, **kw)
        b = empirical_block_distortion(stable_model, BeamPolicy.multibeam(2.0), 50, 40, 5, **kw)
        assert a.mean == b.mean and a.std_error == b.std_error
        assert np.array_equal(a.per_index_mean, b.per_index_mean)

    def test_per_index_shape(self, stable_model):
        rep = empirical_block_distortion(
            stable_model, BeamPolicy.switching(0.7), 30, 25, seed=6, s0_mean=[0.0], s0_cov=[[1.0]]
        )
        assert rep.per_index_mean.shape == (31,)
        assert rep.ci3()[0] <= rep.mean <= rep.ci3()[1]


class TestTrackingLossMonitor:
    def test_all_below_threshold(self):
        assert tracking_loss_monitor([0.1, 0.2, 0.3], 1.0) is None

    def test_infinite_threshold(self):
        assert tracking_loss_monitor([1e300, 1e305], math.inf) is None

    def test_unstable_open_loop_violation_index_shrinks_with_threshold(self, unstable_model):
        rep = empirical_block_distortion(
            unstable_model,
            BeamPolicy.switching(0.0),
            60,
            200,
            seed=7,
            s0_mean=[0.0],
            s0_cov=[[1.0]],
        )
        # open-loop error grows geometrically, oracle: direct recursion
        idx_hi = tracking_loss_monitor(rep.per_index_mean, 50.0)
        idx_lo = tracking_loss_monitor(rep.per_index_mean, 5.0)
        assert idx_hi is not None and idx_lo is not None
        assert idx_lo < idx_hi

    def test_threshold_validation(self):
        with pytest.raises(ParameterError):
            tracking_loss_monitor([0.1], 0.0)
