"""
Regime Analyzer for Calibration Experiments
Derives the characteristic rates of a configuration and flags where approximations break down
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, TYPE_CHECKING

from config.constants import WEAK_REGIME_RATIO
from physics.ensemble_solver import relaxation_rate, zeno_peak_measurement_rate
from physics.noise_model import rms_at_origin
from protocol.calibration import (
    drift_variance,
    expected_switch_count,
    optimal_time,
    protocol_threshold_bandwidth,
    statistical_uncertainty,
)

if TYPE_CHECKING:
    from config.experiment_config import ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass
class RegimeAnalysis:
    gamma_m: float
    measurement_dt_product: float
    noise_rms: float
    relaxation_rate: float
    expected_switches_per_phase: float
    statistical_variance: float
    drift_variance: float
    optimal_time: float
    band_width: float
    band_width_time_product: float
    threshold_band_width: float
    zeno_regime: bool
    perturbative: bool
    warnings: List[str]

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


class RegimeAnalyzer:
    """
    Checks a configuration against the approximations the calibration relies on
    """

    def analyze(self, config: 'ExperimentConfig') -> RegimeAnalysis:
        """
        Computes the derived rates of a configuration and collects regime warnings
        """
        cfg = config.detector
        gamma_m = cfg.gamma_m
        spec = config.noise.spec
        rms = abs(config.noise.static_dv) if config.noise.static_dv is not None else rms_at_origin(spec)
        phase = config.phase_duration
        total = 2.0 * phase
        rate = relaxation_rate(config.ez, gamma_m, rms)

        warnings = []
        if cfg.delta_i > WEAK_REGIME_RATIO * abs(cfg.midpoint):
            warnings.append("delta_I is not small against the mean current")
        zeno = gamma_m > zeno_peak_measurement_rate(config.ez)
        if zeno:
            warnings.append("gamma_m > 2 E_z: measurement suppresses relaxation (Zeno side)")
        perturbative = rms <= 0.15 * config.ez
        if not perturbative:
            warnings.append(f"|dV|/E_z = {rms / config.ez:.3g} exceeds the second-order range")

        band_width = spec.band_width
        bw_time = band_width * total
        if config.noise.static_dv is None and bw_time > 1.0:
            warnings.append(f"B_w*T = {bw_time:.3g}: noise drifts within one calibration")

        expected = expected_switch_count(config.ez, gamma_m, rms, phase)
        if expected < 5.0:
            warnings.append(f"only {expected:.2g} switches expected per phase; estimates are count-limited")

        for message in warnings:
            logger.warning(message)

        return RegimeAnalysis(
            gamma_m=gamma_m,
            measurement_dt_product=cfg.dt * gamma_m,
            noise_rms=rms,
            relaxation_rate=rate,
            expected_switches_per_phase=expected,
            statistical_variance=statistical_uncertainty(config.ez, gamma_m, phase),
            drift_variance=drift_variance(spec, total) if bw_time <= 1.0 else float('nan'),
            optimal_time=optimal_time(config.ez, gamma_m, spec),
            band_width=band_width,
            band_width_time_product=bw_time,
            threshold_band_width=protocol_threshold_bandwidth(config.protocol.n_p, gamma_m),
            zeno_regime=zeno,
            perturbative=perturbative,
            warnings=warnings,
        )

    def get_regime_summary(self, config: 'ExperimentConfig') -> str:
        """
        Short human-readable summary of the regime
        """
        analysis = self.analyze(config)
        lines = [
            "🎯 Regime summary",
            f"   gamma_m = {analysis.gamma_m:.4g}, tau_a^-1 = {analysis.relaxation_rate:.4g}",
            f"   expected switches per phase = {analysis.expected_switches_per_phase:.1f}",
            f"   sigma(dV1) = {analysis.statistical_variance ** 0.5:.3g}",
            f"   B_w*T = {analysis.band_width_time_product:.3g} "
            f"(threshold B_w = {analysis.threshold_band_width:.3g})",
        ]
        lines.extend(f"⚠️ {w}" for w in analysis.warnings)
        return "\n".join(lines)
