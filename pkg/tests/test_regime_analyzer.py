#!/usr/bin/env python3
"""
Tests for derived rates and regime warnings of a configuration.
"""

import logging
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

from utils.regime_analyzer import RegimeAnalyzer


@pytest.fixture
def analyzer() -> RegimeAnalyzer:
    return RegimeAnalyzer()


class TestRegimeAnalyzer:
    """Regime checks on presets and edge configurations."""

    def test_baseline_is_clean(self, analyzer, baseline_config):
        """The reference working point raises no warnings."""
        analysis = analyzer.analyze(baseline_config)
        assert analysis.warnings == []
        assert analysis.noise_rms == pytest.approx(0.8)
        assert analysis.measurement_dt_product == pytest.approx(0.005)
        assert analysis.threshold_band_width == pytest.approx(1.25e-5)
        assert not analysis.zeno_regime
        assert analysis.perturbative

    def test_short_protocol_is_count_limited(self, analyzer, quick_config, caplog):
        """n_p = 200 expects only a few switches per phase and says so."""
        with caplog.at_level(logging.WARNING, logger='utils.regime_analyzer'):
            analysis = analyzer.analyze(quick_config)
        assert analysis.expected_switches_per_phase < 5.0
        assert any('count-limited' in w for w in analysis.warnings)
        assert caplog.records

    def test_zeno_side(self, analyzer, baseline_config):
        """gamma_m above 2 E_z is flagged."""
        config = baseline_config.with_overrides(ez=0.04, noise={'static_dv': 0.001})
        analysis = analyzer.analyze(config)
        assert analysis.zeno_regime
        assert any('Zeno' in w for w in analysis.warnings)

    def test_wide_band_drift(self, analyzer, baseline_config):
        """B_w T > 1 warns and leaves the drift estimate undefined."""
        config = baseline_config.with_overrides(noise={'delta_omega': 5e-6})
        analysis = analyzer.analyze(config)
        assert analysis.band_width_time_product > 1.0
        assert analysis.drift_variance != analysis.drift_variance
        assert any('drifts' in w for w in analysis.warnings)

    def test_summary_text(self, analyzer, baseline_config):
        """The summary reports gamma_m and the threshold band width."""
        text = analyzer.get_regime_summary(baseline_config)
        assert 'gamma_m = 0.1' in text
        assert 'threshold B_w' in text

    def test_to_dict(self, analyzer, baseline_config):
        """to_dict is a flat mapping of every field."""
        data = analyzer.analyze(baseline_config).to_dict()
        assert data['gamma_m'] == pytest.approx(0.1)
        assert 'warnings' in data


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
