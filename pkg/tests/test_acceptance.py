#!/usr/bin/env python3
"""
Statistical acceptance runs at the reference working point.

These simulate hundreds of long trajectories and take minutes; run them with
`pytest -m slow`.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from config.constants import DEFAULT_BANDWIDTHS
from config.experiment_config import ExperimentConfig
from physics.detector import DetectorConfig, TrajectoryBatch
from physics.ensemble_solver import integrate_master
from physics.noise_model import StaticNoise
from physics.qubit_core import DensityMatrix
from protocol.calibration import (
    bandwidth_sweep,
    combined_uncertainty,
    count_variance_factors,
    exact_switching_rate,
    expected_switch_count,
    protocol_threshold_bandwidth,
    run_calibration_batch,
    statistical_uncertainty,
)
from protocol.count_response import measure_count_response
from protocol.gates import TrajectoryResidues, build_gate, fidelity_curve
from protocol.record_pipeline import binarize, poisson_goodness_of_fit, samples_per_window, switch_counts

pytestmark = pytest.mark.slow

EZ, DV, GAMMA_M, N_P = 7.0, 0.82, 0.1, 2000
REFERENCE_CFG = DetectorConfig(i0=10.0, i1=10.4, s_i=0.4, dt=0.05)
ACCURACY_SEEDS = 500


@pytest.fixture(scope='module')
def reference_calibrations():
    """200 two-phase calibrations at dV = 0.82 with the reference detector."""
    return run_calibration_batch(EZ, REFERENCE_CFG, StaticNoise(DV), n_p=N_P, seed=2024, size=200)


def _phase_one_counts(cfg: DetectorConfig, size: int, seed: int) -> np.ndarray:
    batch = TrajectoryBatch.from_seed(cfg, EZ, seed, size)
    segment = batch.advance(2.0 * N_P / cfg.gamma_m, StaticNoise(DV),
                            samples_per_window=samples_per_window(cfg.dt, cfg.gamma_m))
    return switch_counts(binarize(segment.windowed, cfg))


def _signed_estimates(dv: float, seed: int) -> np.ndarray:
    results = run_calibration_batch(EZ, REFERENCE_CFG, StaticNoise(dv), n_p=N_P, seed=seed, size=ACCURACY_SEEDS)
    return np.array([r.dv_c for r in results])


class TestTrajectoryEnsembleAgreement:
    """Averaged selective trajectories reproduce the master equation."""

    def test_mean_population_follows_master_equation(self, detector_cfg):
        """Mean rho00 over 2000 trajectories stays within 0.067 of the ensemble solution."""
        batch = TrajectoryBatch.from_seed(detector_cfg, EZ, seed=77, size=2000)
        segment = batch.advance(3600.0, StaticNoise(DV), log_every=7200)
        averaged = segment.log_rho00.mean(axis=0)

        trace = integrate_master(DensityMatrix.ground(), EZ, DV, detector_cfg.gamma_m, 3600.0, 0.005,
                                 checkpoints=10)
        np.testing.assert_allclose(segment.log_times, trace.times)
        assert np.max(np.abs(averaged - trace.rho00)) < 0.067


class TestSwitchingStatistics:
    """Switch counts of the two calibration phases."""

    def test_mean_count_matches_rate(self, reference_calibrations):
        """Corrected phase-one counts average within 3 sqrt(lambda / N) of the slow-mode count."""
        duration = reference_calibrations[0].phase_duration
        assert expected_switch_count(EZ, GAMMA_M, DV, duration) == pytest.approx(27.4, abs=0.1)
        expected = exact_switching_rate(EZ, GAMMA_M, DV) * duration
        assert expected == pytest.approx(27.07, abs=0.05)

        corrected = np.array([r.n1_corrected for r in reference_calibrations])
        tolerance = 3.0 * math.sqrt(27.4 / corrected.size)
        assert abs(corrected.mean() - expected) <= tolerance
        assert abs(corrected.mean() - 27.4) <= tolerance

    def test_counts_are_poissonian(self, reference_calibrations):
        """Observed phase-one counts pass a chi-square test against the predicted mean."""
        n1 = np.array([r.n1 for r in reference_calibrations])
        duration = reference_calibrations[0].phase_duration
        response = measure_count_response(REFERENCE_CFG, 0.25, 2)
        predicted = response.expected_count(exact_switching_rate(EZ, GAMMA_M, DV) * duration, N_P)
        _, p_value = poisson_goodness_of_fit(n1, mean=predicted)
        assert p_value > 0.01

    def test_reported_counts_are_typical(self, reference_calibrations):
        """Counts of 29 and 7 lie inside the central 99% of the simulated phases."""
        n1 = np.array([r.n1 for r in reference_calibrations])
        n2 = np.array([r.n2 for r in reference_calibrations])
        assert np.quantile(n1, 0.005) <= 29 <= np.quantile(n1, 0.995)
        assert np.quantile(n2, 0.005) <= 7 <= np.quantile(n2, 0.995)

    def test_calibrated_value(self, reference_calibrations):
        """The sign is recovered and dV_c is close to the true value on average."""
        dv_c = np.array([r.dv_c for r in reference_calibrations])
        assert np.mean(dv_c > 0) >= 0.99
        assert dv_c.mean() == pytest.approx(DV, abs=0.02)

    def test_half_step_converges(self, reference_calibrations):
        """Halving dt changes the mean phase-one count by less than 15%."""
        fine = DetectorConfig(i0=10.0, i1=10.4, s_i=0.4, dt=0.025)
        n_fine = _phase_one_counts(fine, size=100, seed=99)
        n_coarse = np.array([r.n1 for r in reference_calibrations])
        assert n_fine.mean() == pytest.approx(n_coarse.mean(), rel=0.15)


class TestCalibrationAccuracy:
    """Signed estimates over 500 seeds at constant noise."""

    @pytest.mark.parametrize("dv,seed", [(0.8, 31), (-0.8, 32)])
    def test_large_noise_is_unbiased(self, dv, seed):
        """
        |mean - dV| <= 3 sigma / sqrt(500), the spread matches the error budget within
        25% and the sign is right in 99% of runs.
        """
        estimates = _signed_estimates(dv, seed)
        duration = 2.0 * N_P / GAMMA_M
        sigma_sq = statistical_uncertainty(EZ, GAMMA_M, duration)
        assert abs(estimates.mean() - dv) <= 3.0 * math.sqrt(sigma_sq / estimates.size)

        factors = count_variance_factors(measure_count_response(REFERENCE_CFG, 0.25, 2), EZ, GAMMA_M, dv, N_P)
        predicted = combined_uncertainty(EZ, GAMMA_M, duration, dv > 0, factors)
        assert estimates.var(ddof=1) == pytest.approx(predicted, rel=0.25)
        if dv > 0:
            assert estimates.var(ddof=1) == pytest.approx(sigma_sq, rel=0.25)
        assert np.mean(np.sign(estimates) == np.sign(dv)) >= 0.99

    @pytest.mark.parametrize("dv,seed,min_sign", [(0.4, 41, 0.85), (-0.4, 42, 0.9)])
    def test_small_noise_keeps_sign_and_scale(self, dv, seed, min_sign):
        """
        At |dV| = 0.4 phase two sees only a couple of switches, so the mean is held to
        0.1 and the sign to a looser share.
        """
        estimates = _signed_estimates(dv, seed)
        assert estimates.mean() == pytest.approx(dv, abs=0.1)
        assert np.mean(np.sign(estimates) == np.sign(dv)) >= min_sign


class TestBandwidthKnee:
    """Trajectory-level band-width sweep."""

    @pytest.fixture(scope='class')
    def sweep(self):
        return bandwidth_sweep(ExperimentConfig(), bandwidths=DEFAULT_BANDWIDTHS, repetitions=20,
                               seed=5, mode='trajectory')

    def test_residue_rises_past_threshold(self, sweep):
        """Residue at B_w = 1e-4 is at least ten times that at 1e-6."""
        assert sweep.knee_ratio() >= 10.0
        table = sweep.table.set_index('B_w')
        assert table.loc[1e-4, 'mean_sq_residue'] > table.loc[1e-6, 'mean_sq_residue']

    def test_knee_sits_at_protocol_threshold(self, sweep):
        """The residue rise starts within a factor 3 of (4 n_p / gamma_m)^-1."""
        threshold = protocol_threshold_bandwidth(N_P, GAMMA_M)
        assert threshold / 3.0 <= sweep.knee_bandwidth() <= 3.0 * threshold

    def test_estimates_track_initial_noise(self, sweep):
        """At B_w = 1e-5 most estimates lie within 0.15 of dV(0)."""
        frame = sweep.inset(1e-5)
        assert len(frame) == 20
        assert sweep.fraction_near_start(1e-5) >= 0.5


class TestGateSuite:
    """Gate fidelity with residues from simulated calibrations."""

    def test_calibrated_bitflip(self):
        """Calibrated fidelity beats raw from dV = 0.4 and stays above 0.99 up to 0.8."""
        values = [0.0, 0.2, 0.4, 0.6, 0.8]
        source = TrajectoryResidues(EZ, REFERENCE_CFG, N_P)
        report = fidelity_curve(build_gate('bitflip', EZ), values, source, realizations=50, seed=3)
        assert report.fidelity_raw[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all(report.fidelity_calibrated[2:] >= report.fidelity_raw[2:])
        assert np.all(report.fidelity_calibrated >= 0.99)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
