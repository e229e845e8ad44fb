#!/usr/bin/env python3
"""
Tests for CSV/manifest export and the quick-look plots.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from config.constants import MANIFEST_FILENAME, PROJECT_NAME
from physics.detector import run_trajectory
from physics.ensemble_solver import integrate_master
from physics.noise_model import StaticNoise
from physics.qubit_core import DensityMatrix
from protocol.calibration import SweepResult
from protocol.gates import build_gate, fidelity_curve
from protocol.record_pipeline import process_record
from team.alternating_schedule import alternating_schedule
from tools.experiment_tools import ExperimentTools, to_jsonable
from utils.visualization import CalibrationVisualizer


@pytest.fixture
def tools() -> ExperimentTools:
    return ExperimentTools()


class TestJsonConversion:
    """Plain-JSON conversion of results."""

    def test_numpy_values(self):
        """Arrays, scalars and nested containers become plain values."""
        data = to_jsonable({'a': np.arange(3), 'b': np.float64(1.5), 'c': (np.int64(2),)})
        assert data == {'a': [0, 1, 2], 'b': 1.5, 'c': [2]}

    def test_non_finite_become_null(self):
        """NaN and inf map to None."""
        assert to_jsonable([float('nan'), np.inf, 1.0]) == [None, None, 1.0]

    def test_complex(self):
        """Complex numbers become [re, im]."""
        assert to_jsonable(1.0 + 2.0j) == [1.0, 2.0]


class TestExports:
    """CSV tables, manifest and timing."""

    def test_table_round_trip(self, tools, tmp_path):
        """CSV keeps the header and 17 significant digits."""
        frame = pd.DataFrame({'t': [0.0, 0.1], 'value': [1.0 / 3.0, 2.0 / 3.0]})
        path = tools.export_table(frame, tmp_path / 'nested' / 'table.csv')
        back = pd.read_csv(path, float_precision='round_trip')
        assert list(back.columns) == ['t', 'value']
        assert back['value'].iloc[0] == 1.0 / 3.0

    def test_manifest_is_sorted_and_stable(self, tools, tmp_path):
        """Keys are sorted and two writes of the same data are identical."""
        data = {'seed': 3, 'results': {'b': 1, 'a': float('nan')}}
        first = tools.export_manifest(data, tmp_path).read_text()
        second = tools.export_manifest(data, tmp_path).read_text()
        assert first == second
        document = json.loads(first)
        assert document['project'] == PROJECT_NAME
        assert document['results'] == {'a': None, 'b': 1}
        assert list(document) == sorted(document)
        assert (tmp_path / MANIFEST_FILENAME).is_file()

    def test_library_versions(self, tools):
        """Tracked packages report a version string."""
        versions = tools.library_versions()
        assert versions['numpy'] == np.__version__

    def test_timed_stages(self, tools):
        """timed() records one entry per block."""
        with tools.timed('a'):
            pass
        with tools.timed('b'):
            pass
        assert [m.stage for m in tools.metrics_history] == ['a', 'b']
        assert tools.total_runtime() >= 0.0


class TestVisualization:
    """Every plot writes an SVG file."""

    def test_trajectory_and_ensemble_plots(self, tmp_path, detector_cfg):
        """Trajectory and ensemble plots are saved as SVG."""
        visualizer = CalibrationVisualizer(tmp_path)
        record = run_trajectory(DensityMatrix.ground(), 7.0, StaticNoise(0.82), detector_cfg, 200.0, seed=1)
        record = process_record(record, detector_cfg)
        trace = integrate_master(DensityMatrix.ground(), 7.0, 0.82, 0.1, 100.0, 0.005, checkpoints=20)
        assert visualizer.plot_trajectory(record, detector_cfg).suffix == '.svg'
        assert visualizer.plot_ensemble(trace, 1.3723e-3).is_file()

    def test_sweep_fidelity_and_schedule_plots(self, tmp_path, quick_config):
        """Sweep, fidelity and schedule plots are saved."""
        visualizer = CalibrationVisualizer(tmp_path)
        table = pd.DataFrame({'B_w': [1e-6, 1e-4], 'mean_sq_residue': [0.01, 1.0],
                              'stderr': [0.001, 0.1], 'mean_sq_noise': [0.64, 0.64]})
        residues = {1e-6: np.array([0.1, -0.05]), 1e-4: np.array([1.0, -0.8])}
        estimates = {bw: pd.DataFrame({'dv_start': [0.5, -0.3], 'dv_c': [0.45, -0.2], 'dv_end': [0.55, -0.25],
                                       'residue': res}) for bw, res in residues.items()}
        sweep = SweepResult(table=table, residues=residues, estimates=estimates)
        bare = SweepResult(table=table, residues=residues)
        report = fidelity_curve(build_gate('bitflip', 7.0), [0.0, 0.4])
        schedule = alternating_schedule(['bitflip', 'hadamard'], quick_config.with_overrides(noise={'static_dv': 0.0}),
                                        residue_mode='counts')

        paths = [
            visualizer.plot_bandwidth_sweep(sweep, threshold=1.25e-5),
            visualizer.plot_bandwidth_sweep(bare, name='bandwidth_sweep_residues'),
            visualizer.plot_fidelity_curve(report),
            visualizer.plot_schedule(schedule, 2.0 * quick_config.phase_duration),
        ]
        assert all(path.is_file() for path in paths)

    def test_svg_is_reproducible(self, tmp_path):
        """Saving the same figure twice gives identical bytes."""
        report = fidelity_curve(build_gate('phase', 7.0), [0.0, 0.2, 0.4])
        first = CalibrationVisualizer(tmp_path / 'a').plot_fidelity_curve(report).read_bytes()
        second = CalibrationVisualizer(tmp_path / 'b').plot_fidelity_curve(report).read_bytes()
        assert first == second


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
