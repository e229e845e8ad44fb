#!/usr/bin/env python3
"""
Tests for the two-phase calibration protocol and its error budget.
"""

import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import poisson

sys.path.append(str(Path(__file__).parent.parent))

from config.constants import SMALL_COUNT_SHIFT
from physics.ensemble_solver import coupling_for_rate
from physics.noise_model import NoiseSpec, StaticNoise, ensemble_variance, eval_noise, sample_noise_model
from protocol.calibration import (
    SweepResult,
    bandwidth_sweep,
    combine_estimates,
    combined_uncertainty,
    dephasing_reduction_factor,
    drift_variance,
    estimate_coupling,
    estimate_magnitude,
    exact_switching_rate,
    expected_switch_count,
    optimal_time,
    optimal_time_numeric,
    phase_duration_for,
    protocol_threshold_bandwidth,
    run_calibration,
    run_calibration_batch,
    run_calibration_counts,
    statistical_uncertainty,
    sweep_noise_spec,
)
from protocol.count_response import CountResponse
from utils.error_handler import InvalidParameterError, UndefinedQuantityError

EZ, GAMMA_M = 7.0, 0.1
PHASE_T = phase_duration_for(2000, GAMMA_M)


class TestEstimators:
    """Count inversion and the piecewise sign rule."""

    def test_phase_duration(self):
        """n_p = 2000 windows at gamma_m = 0.1 last 40000."""
        assert PHASE_T == pytest.approx(40_000.0)

    def test_expected_count_at_reference_point(self):
        """dV = 0.82 gives about 27.4 switches per phase."""
        assert expected_switch_count(EZ, GAMMA_M, 0.82, PHASE_T) == pytest.approx(27.45, abs=0.05)

    def test_estimate_inverts_expected_count(self):
        """estimate_magnitude(expected count) returns |dV|."""
        for dv in (0.1, 0.5, -0.82, 1.3):
            n = expected_switch_count(EZ, GAMMA_M, dv, PHASE_T)
            assert estimate_magnitude(n, PHASE_T, EZ, GAMMA_M) == pytest.approx(abs(dv), rel=1e-12)

    def test_estimate_closed_form(self):
        """27 switches in 40000 give sqrt(27 * 196.01 / 8000)."""
        expected = math.sqrt(27 * 196.01 / 8000.0)
        assert estimate_magnitude(27, PHASE_T, EZ, GAMMA_M) == pytest.approx(expected)

    def test_estimate_zero_count(self):
        """No switches estimate zero noise."""
        assert estimate_magnitude(0, PHASE_T, EZ, GAMMA_M) == 0.0

    def test_estimate_array_input(self):
        """Arrays are mapped elementwise."""
        assert estimate_magnitude(np.array([0, 27, 100]), PHASE_T, EZ, GAMMA_M).shape == (3,)

    def test_estimate_rejects_bad_input(self):
        """Non-positive T or negative counts are invalid."""
        with pytest.raises(InvalidParameterError):
            estimate_magnitude(5, 0.0, EZ, GAMMA_M)
        with pytest.raises(InvalidParameterError):
            estimate_magnitude(-1, PHASE_T, EZ, GAMMA_M)

    def test_coupling_estimate_inverts_exact_rate(self):
        """A count of T / tau_jp - 1/4 at the exact rate returns |dV|."""
        for dv in (0.1, 0.5, -0.82, 1.3):
            n = exact_switching_rate(EZ, GAMMA_M, dv) * PHASE_T - SMALL_COUNT_SHIFT
            assert estimate_coupling(n, PHASE_T, EZ, GAMMA_M) == pytest.approx(abs(dv), rel=1e-9)

    def test_coupling_estimate_zero_and_arrays(self):
        """Zero counts stay zero and arrays map elementwise."""
        assert estimate_coupling(0, PHASE_T, EZ, GAMMA_M) == 0.0
        values = estimate_coupling(np.array([0, 27, 100]), PHASE_T, EZ, GAMMA_M)
        assert values.shape == (3,)
        assert values[0] == 0.0 and np.all(np.diff(values) > 0)

    def test_small_count_shift_removes_square_root_bias(self):
        """For Poisson counts of mean 16 the shifted estimate is unbiased to 0.2%; the plain one is low."""
        mean = 16.0
        k = np.arange(80)
        weights = poisson.pmf(k, mean)
        target = coupling_for_rate(2.0 * mean / PHASE_T, EZ, GAMMA_M)
        shifted = float(np.sum(weights * estimate_coupling(k, PHASE_T, EZ, GAMMA_M)))
        assert shifted == pytest.approx(target, rel=2e-3)
        plain = float(np.sum(weights * estimate_magnitude(k, PHASE_T, EZ, GAMMA_M)))
        assert plain < 0.995 * estimate_magnitude(mean, PHASE_T, EZ, GAMMA_M)

    def test_coupling_estimate_applies_count_response(self):
        """Observed counts are mapped to true counts before inversion."""
        response = CountResponse(rates=np.array([0.01, 0.1]), log_efficiency=np.log([0.9, 0.6]), false_rate=0.0)
        observed = np.array([3.0, 18.0])
        direct = estimate_coupling(response.true_count(observed, 2000), PHASE_T, EZ, GAMMA_M)
        np.testing.assert_allclose(estimate_coupling(observed, PHASE_T, EZ, GAMMA_M, response, 2000), direct)
        assert np.all(direct > estimate_coupling(observed, PHASE_T, EZ, GAMMA_M))
        with pytest.raises(InvalidParameterError):
            estimate_coupling(observed, PHASE_T, EZ, GAMMA_M, response)

    def test_coupling_estimate_rejects_bad_input(self):
        """Non-positive T or negative counts are invalid."""
        with pytest.raises(InvalidParameterError):
            estimate_coupling(5, 0.0, EZ, GAMMA_M)
        with pytest.raises(InvalidParameterError):
            estimate_coupling(-1, PHASE_T, EZ, GAMMA_M)

    def test_combine_branches(self):
        """dv1 >= dv2 is the positive branch, otherwise the negative one."""
        assert combine_estimates(1.0, 0.5) == pytest.approx(1.0)
        assert combine_estimates(0.5, 1.0) == pytest.approx(-0.25 - 1.0 / 3.0)

    def test_combine_tie_is_positive(self):
        """Equal magnitudes take the positive branch."""
        assert combine_estimates(0.4, 0.4) == pytest.approx(0.6)

    def test_combine_rejects_negative_magnitudes(self):
        """Phase estimates are magnitudes."""
        with pytest.raises(InvalidParameterError):
            combine_estimates(-0.1, 0.2)

    @pytest.mark.parametrize("dv", [-1.2, -0.82, -0.3, 0.05, 0.3, 0.82, 1.2])
    def test_noiseless_protocol_recovers_signed_dv(self, dv):
        """With exact counts both phases combine back to the true signed dV."""
        dv1 = estimate_magnitude(expected_switch_count(EZ, GAMMA_M, dv, PHASE_T), PHASE_T, EZ, GAMMA_M)
        coupling = dv - 0.5 * dv1
        dv2 = estimate_magnitude(expected_switch_count(EZ, GAMMA_M, coupling, PHASE_T), PHASE_T, EZ, GAMMA_M)
        assert combine_estimates(dv1, dv2) == pytest.approx(dv, rel=1e-9)


class TestErrorBudget:
    """Statistical, drift and optimal-time terms."""

    @pytest.fixture
    def spec(self) -> NoiseSpec:
        return NoiseSpec(beta=2e-7, delta_omega=5e-8, n_components=20)

    def test_statistical_uncertainty_value(self):
        """(4 E_z^2 + gamma_m^2) / (8 gamma_m T) at T = 40000 is 6.125e-3."""
        assert statistical_uncertainty(EZ, GAMMA_M, PHASE_T) == pytest.approx(6.1253e-3, rel=1e-4)

    def test_combined_uncertainty_weights(self):
        """dV_c carries the phase variance for dV > 0 and 5/9 of it for dV < 0."""
        base = statistical_uncertainty(EZ, GAMMA_M, PHASE_T)
        assert combined_uncertainty(EZ, GAMMA_M, PHASE_T) == pytest.approx(base)
        assert combined_uncertainty(EZ, GAMMA_M, PHASE_T, positive=False) == pytest.approx(5.0 / 9.0 * base)
        inflated = combined_uncertainty(EZ, GAMMA_M, PHASE_T, positive=False, inflation=(1.2, 1.5))
        assert inflated == pytest.approx((4.0 * 1.2 + 1.5) / 9.0 * base)
        assert combined_uncertainty(EZ, GAMMA_M, PHASE_T, inflation=(1.2, 1.5)) == pytest.approx(1.5 * base)

    def test_combined_uncertainty_matches_propagated_errors(self):
        """Linearised phase errors through the sign rule give the same two variances."""
        rng = np.random.default_rng(11)
        sigma = math.sqrt(statistical_uncertainty(EZ, GAMMA_M, PHASE_T))
        e1, e2 = sigma * rng.standard_normal((2, 200_000))
        for dv, positive in ((0.8, True), (-0.8, False)):
            dv1 = abs(dv) + e1
            dv2 = np.abs(dv - 0.5 * dv1) + e2
            spread = np.var(combine_estimates(dv1, dv2))
            assert spread == pytest.approx(combined_uncertainty(EZ, GAMMA_M, PHASE_T, positive), rel=0.03)

    def test_drift_zero_duration(self, spec):
        """No time, no drift."""
        assert drift_variance(spec, 0.0) == 0.0

    def test_drift_is_quadratic(self, spec):
        """Doubling T quadruples the drift variance."""
        assert drift_variance(spec, 2000.0) == pytest.approx(4.0 * drift_variance(spec, 1000.0))

    def test_drift_matches_closed_form(self, spec):
        """With alpha_sq = 1/3 it equals beta B_w^2 T^2 / (12 delta_omega) times (N + 1) / N."""
        duration = 1e4
        closed = spec.beta * spec.band_width ** 2 * duration ** 2 / (12.0 * spec.delta_omega)
        ratio = (spec.n_components + 1) / spec.n_components
        assert drift_variance(spec, duration, alpha_sq=1.0 / 3.0) == pytest.approx(closed * ratio)

    def test_drift_matches_monte_carlo(self, spec):
        """At B_w T = 0.1 the sampled variance of dV(T) - dV(0) agrees within 10%."""
        duration = 0.1 / spec.band_width
        diffs = []
        for seed in range(4000):
            model = sample_noise_model(spec, seed)
            diffs.append(eval_noise(model, duration) - eval_noise(model, 0.0))
        assert np.mean(np.square(diffs)) == pytest.approx(drift_variance(spec, duration), rel=0.1)

    def test_drift_warns_outside_small_t(self, spec, caplog):
        """B_w T > 1 logs a warning."""
        with caplog.at_level(logging.WARNING, logger='protocol.calibration'):
            drift_variance(spec, 5.0 / spec.band_width)
        assert any('outside its range' in record.message for record in caplog.records)

    def test_optimal_time_matches_numeric_minimum(self, spec):
        """The closed-form T* agrees with golden-section search within 0.1%."""
        assert optimal_time_numeric(EZ, GAMMA_M, spec) == pytest.approx(optimal_time(EZ, GAMMA_M, spec), rel=1e-3)

    def test_optimal_time_scaling(self, spec):
        """Eight times the drift coefficient halves T*."""
        louder = NoiseSpec(beta=8.0 * spec.beta, delta_omega=spec.delta_omega, n_components=spec.n_components)
        assert optimal_time(EZ, GAMMA_M, louder) == pytest.approx(0.5 * optimal_time(EZ, GAMMA_M, spec))

    def test_reduction_factor_reference(self):
        """(0.73, 0.87, 0.82) reduces second-order dephasing to about 8.5e-4."""
        assert dephasing_reduction_factor(0.73, 0.87, 0.82) == pytest.approx(8.5e-4, rel=0.01)

    def test_reduction_factor_exact_calibration(self):
        """A perfect calibration removes the dephasing."""
        assert dephasing_reduction_factor(0.5, 0.5, 0.8) == 0.0

    def test_reduction_factor_sign_invariant(self):
        """Flipping every sign leaves the factor unchanged."""
        assert dephasing_reduction_factor(-0.73, -0.87, -0.82) == pytest.approx(
            dephasing_reduction_factor(0.73, 0.87, 0.82))

    def test_reduction_factor_undefined(self):
        """dV(0) = 0 is undefined."""
        with pytest.raises(UndefinedQuantityError):
            dephasing_reduction_factor(0.1, 0.0, 0.0)

    def test_threshold_bandwidth(self):
        """(4 n_p / gamma_m)^-1 = 1.25e-5 at n_p = 2000."""
        assert protocol_threshold_bandwidth(2000, GAMMA_M) == pytest.approx(1.25e-5)


class TestTrajectoryCalibration:
    """The protocol on simulated detector records."""

    def test_zero_noise_gives_zero_estimate(self, detector_cfg):
        """Without noise the qubit never switches and dV_c = 0."""
        result = run_calibration(EZ, detector_cfg, StaticNoise(0.0), n_p=200, seed=3)
        assert result.n1 == 0 and result.n2 == 0
        assert result.dv_c == 0.0
        assert result.residue == 0.0

    def test_keep_records(self, detector_cfg):
        """keep_records attaches one record per phase."""
        result = run_calibration(EZ, detector_cfg, StaticNoise(0.82), n_p=50, seed=1, keep_records=True)
        first, second = result.phase_records
        assert first.windowed.size == 50
        assert second.raw.size == 50 * 400
        assert first.switch_count == result.n1
        assert second.t0 == pytest.approx(result.phase_duration)

    def test_batch_rows_match_single_runs(self, detector_cfg):
        """Run m of a batch equals a single run with index m."""
        batch = run_calibration_batch(EZ, detector_cfg, StaticNoise(0.82), n_p=100, seed=8, size=2)
        single = run_calibration(EZ, detector_cfg, StaticNoise(0.82), n_p=100, seed=8, index=1)
        assert (batch[1].n1, batch[1].n2) == (single.n1, single.n2)
        assert batch[1].dv_c == pytest.approx(single.dv_c)

    def test_manifest_fields(self, detector_cfg):
        """to_manifest reports counts, estimates and the residue."""
        result = run_calibration(EZ, detector_cfg, StaticNoise(0.0), n_p=20, seed=0)
        manifest = result.to_manifest()
        assert {'dv1', 'dv2', 'dv_c', 'n1', 'n2', 'residue'} <= set(manifest)

    def test_rejects_zero_windows(self, detector_cfg):
        """n_p must be at least one."""
        with pytest.raises(InvalidParameterError):
            run_calibration(EZ, detector_cfg, StaticNoise(0.1), n_p=0)

    def test_count_correction_switch(self, detector_cfg):
        """Corrected runs report mapped counts; uncorrected runs invert the raw count."""
        corrected = run_calibration(EZ, detector_cfg, StaticNoise(0.82), n_p=200, seed=1)
        raw = run_calibration(EZ, detector_cfg, StaticNoise(0.82), n_p=200, seed=1, count_correction=False)
        assert corrected.n1 == raw.n1
        assert raw.n1_corrected == raw.n1
        assert raw.dv1 == pytest.approx(estimate_magnitude(raw.n1, raw.phase_duration, EZ, GAMMA_M))
        if corrected.n1:
            assert corrected.n1_corrected > corrected.n1
            assert corrected.dv1 > raw.dv1
        assert corrected.to_manifest()['n1_corrected'] == corrected.n1_corrected


class TestCountCalibration:
    """Poisson count-level protocol."""

    def test_positive_noise_statistics(self):
        """At dV = 0.82 the sign is recovered and the spread matches the predicted sigma."""
        results = [run_calibration_counts(EZ, GAMMA_M, StaticNoise(0.82), seed=s) for s in range(500)]
        estimates = np.array([r.dv_c for r in results])
        assert np.mean(estimates > 0) >= 0.99
        assert estimates.mean() == pytest.approx(0.82, abs=0.02)
        sigma = results[0].predicted_sigma
        assert 0.5 * sigma <= estimates.std() <= 1.5 * sigma

    def test_negative_noise_sign(self):
        """At dV = -0.82 the negative branch is taken."""
        results = [run_calibration_counts(EZ, GAMMA_M, StaticNoise(-0.82), seed=s) for s in range(200)]
        assert np.mean([r.dv_c < 0 for r in results]) >= 0.99

    def test_seeded(self):
        """The same seed gives the same counts."""
        a = run_calibration_counts(EZ, GAMMA_M, StaticNoise(0.5), seed=4)
        b = run_calibration_counts(EZ, GAMMA_M, StaticNoise(0.5), seed=4)
        assert (a.n1, a.n2) == (b.n1, b.n2)

    def test_uncorrected_inversion(self):
        """count_correction=False uses the second-order square-root law."""
        result = run_calibration_counts(EZ, GAMMA_M, StaticNoise(0.82), seed=2, count_correction=False)
        assert result.dv1 == pytest.approx(estimate_magnitude(result.n1, PHASE_T, EZ, GAMMA_M))
        corrected = run_calibration_counts(EZ, GAMMA_M, StaticNoise(0.82), seed=2)
        assert corrected.dv1 == pytest.approx(estimate_coupling(corrected.n1, PHASE_T, EZ, GAMMA_M))


class TestBandwidthSweep:
    """Residue against noise band width."""

    def test_sweep_spec_hits_target_rms(self):
        """Sweep specs keep N fixed and scale beta to the target RMS."""
        spec = sweep_noise_spec(1e-5, 20, 0.8)
        assert spec.delta_omega == pytest.approx(5e-7)
        assert math.sqrt(ensemble_variance(spec)) == pytest.approx(0.8)

    def test_too_few_repetitions(self, baseline_config):
        """Fewer than 20 repetitions per point is refused."""
        with pytest.raises(InvalidParameterError):
            bandwidth_sweep(baseline_config, repetitions=5, mode='counts')

    def test_counts_mode_knee(self, baseline_config):
        """Residue at B_w = 1e-4 is at least ten times that at 1e-6."""
        result = bandwidth_sweep(baseline_config, bandwidths=[1e-6, 1e-4], mode='counts')
        assert result.knee_ratio() >= 10.0
        assert list(result.table['B_w']) == [1e-6, 1e-4]
        assert {'mean_sq_residue', 'stderr', 'fraction_within_band'} <= set(result.table.columns)

    def test_counts_mode_records_estimates(self, baseline_config):
        """Each band width keeps dV(0), dV_c and dV(T_end) for every run."""
        result = bandwidth_sweep(baseline_config, bandwidths=[1e-6, 1e-5], mode='counts')
        frame = result.inset(1e-5)
        assert list(frame.columns) == ['dv_start', 'dv_c', 'dv_end', 'residue']
        assert len(frame) == baseline_config.run.repetitions
        np.testing.assert_allclose(frame['residue'], frame['dv_c'] - frame['dv_end'])
        np.testing.assert_allclose(result.residues[1e-5], frame['residue'])
        assert 0.0 <= result.fraction_near_start() <= 1.0

    def test_knee_bandwidth_interpolates(self):
        """The knee is where the residue first reaches four times its narrow-band value."""
        table = pd.DataFrame({'B_w': [1e-4, 1e-6, 1e-5], 'mean_sq_residue': [0.5, 0.01, 0.02]})
        sweep = SweepResult(table=table, residues={})
        assert sweep.knee_bandwidth() == pytest.approx(1e-5 * 10.0 ** (math.log(2.0) / math.log(25.0)))
        assert sweep.knee_bandwidth(rise=10.0) == pytest.approx(1e-5 * math.sqrt(10.0))

    def test_knee_needs_a_rise(self):
        """A flat residue curve has no knee."""
        table = pd.DataFrame({'B_w': [1e-6, 1e-5], 'mean_sq_residue': [0.01, 0.012]})
        with pytest.raises(UndefinedQuantityError):
            SweepResult(table=table, residues={}).knee_bandwidth()
        with pytest.raises(UndefinedQuantityError):
            SweepResult(table=table, residues={}).inset()

    def test_fraction_near_start(self):
        """Runs with |dV_c - dV(0)| <= 0.15 are counted at the band width nearest the request."""
        frame = pd.DataFrame({'dv_start': [0.5, 0.5, -0.2, 0.0], 'dv_c': [0.6, 0.7, -0.3, 0.0],
                              'dv_end': [0.6, 0.7, -0.3, 0.0], 'residue': [0.0, 0.0, 0.0, 0.0]})
        sweep = SweepResult(table=pd.DataFrame(), residues={}, estimates={1e-6: frame.iloc[:1], 1.2e-5: frame})
        assert sweep.fraction_near_start(1e-5) == pytest.approx(0.75)

    def test_deterministic(self, baseline_config):
        """A fixed seed reproduces the table."""
        a = bandwidth_sweep(baseline_config, bandwidths=[1e-5], mode='counts', seed=7)
        b = bandwidth_sweep(baseline_config, bandwidths=[1e-5], mode='counts', seed=7)
        assert a.table.equals(b.table)

    @pytest.mark.integration
    def test_parallel_matches_serial(self, baseline_config):
        """Worker count does not change the result."""
        serial = bandwidth_sweep(baseline_config, bandwidths=[1e-6, 1e-5], mode='counts', jobs=1)
        parallel = bandwidth_sweep(baseline_config, bandwidths=[1e-6, 1e-5], mode='counts', jobs=2)
        assert serial.table.equals(parallel.table)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
