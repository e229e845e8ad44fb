"""
Quick-Look Plots for Calibration Experiments
SVG figures of trajectories, ensemble decay, band-width sweeps, gate fidelity and schedules
"""

from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import seaborn as sns  # noqa: E402

from config.constants import (  # noqa: E402
    INSET_BANDWIDTH,
    PROJECT_NAME,
    RESIDUE_BAND,
    VISUALIZATION_DPI,
    VISUALIZATION_FORMAT,
)

# deterministic element ids in SVG output
matplotlib.rcParams['svg.hashsalt'] = PROJECT_NAME

if TYPE_CHECKING:
    from physics.detector import DetectorConfig
    from physics.ensemble_solver import MasterTrace
    from protocol.calibration import SweepResult
    from protocol.gates import FidelityReport
    from protocol.record_pipeline import TrajectoryRecord
    from team.alternating_schedule import ScheduleResult


class CalibrationVisualizer:
    """
    Saves one figure per call into an output directory
    """

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        sns.set_theme(style='whitegrid')
        self.colors = {
            'primary': '#2E86AB',
            'secondary': '#A23B72',
            'accent': '#F18F01',
            'success': '#C73E1D',
            'background': '#F5F5F5'
        }

    def _save(self, fig, name: str) -> Path:
        path = self.output_dir / f"{name}.{VISUALIZATION_FORMAT}"
        fig.tight_layout()
        # fixed metadata keeps repeated runs byte-identical
        fig.savefig(path, format=VISUALIZATION_FORMAT, dpi=VISUALIZATION_DPI, metadata={'Date': None})
        plt.close(fig)
        return path

    def plot_trajectory(self, record: 'TrajectoryRecord', cfg: 'DetectorConfig',
                        name: str = 'trajectory') -> Path:
        """
        Window-averaged current with the detector levels, above the filtered 0/1 signal
        """
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(12, 6), sharex=True)
        if record.windowed is not None and record.windowed.size:
            ax1.plot(record.window_times, record.windowed, color=self.colors['primary'], linewidth=0.8)
            ax2.step(record.window_times, record.bits, where='post', color=self.colors['secondary'])
        for level in (cfg.i0, cfg.i1):
            ax1.axhline(level, color=self.colors['accent'], linestyle='--', linewidth=1)
        ax1.set_ylabel('I_bar', fontweight='bold')
        ax2.set_ylabel('filtered', fontweight='bold')
        ax2.set_xlabel('t', fontweight='bold')
        ax2.set_yticks([0, 1])
        ax1.set_title(f"Window-averaged current ({record.switch_count} switches)", fontweight='bold')
        return self._save(fig, name)

    def plot_ensemble(self, trace: 'MasterTrace', analytic_rate: Optional[float] = None,
                      name: str = 'ensemble') -> Path:
        fig, ax = plt.subplots(1, 1, figsize=(10, 5))
        ax.plot(trace.times, trace.rho00, color=self.colors['primary'], label='rho00(t)')
        if analytic_rate is not None:
            initial = trace.rho00[0] - 0.5
            ax.plot(trace.times, 0.5 + initial * np.exp(-analytic_rate * trace.times),
                    color=self.colors['accent'], linestyle='--', label='1/2 + A exp(-t/tau_a)')
        ax.set_xlabel('t', fontweight='bold')
        ax.set_ylabel('rho00', fontweight='bold')
        ax.legend()
        return self._save(fig, name)

    def plot_bandwidth_sweep(self, sweep: 'SweepResult', threshold: Optional[float] = None,
                             name: str = 'bandwidth_sweep') -> Path:
        """
        Mean squared residue against B_w; the inset plots dV_c against dV(0) at the band
        width nearest 1e-5 inside the +-0.15 band around dV_c = dV(0)
        """
        table = sweep.table
        fig, ax = plt.subplots(1, 1, figsize=(10, 6))
        ax.errorbar(table['B_w'], table['mean_sq_residue'], yerr=table['stderr'], marker='o',
                    color=self.colors['primary'], label='mean squared residue')
        ax.plot(table['B_w'], table['mean_sq_noise'], color=self.colors['secondary'],
                linestyle=':', label='<dV^2>')
        if threshold is not None:
            ax.axvline(threshold, color=self.colors['accent'], linestyle='--', label='(4 n_p / gamma_m)^-1')
        ax.set_xscale('log')
        ax.set_yscale('log')
        ax.set_xlabel('B_w', fontweight='bold')
        ax.set_ylabel('|dV_c - dV(T)|^2', fontweight='bold')
        ax.legend(loc='upper left')

        inset = ax.inset_axes([0.62, 0.1, 0.35, 0.35])
        if sweep.estimates:
            frame = sweep.inset(INSET_BANDWIDTH)
            span = np.array([frame['dv_start'].min(), frame['dv_start'].max()])
            inset.fill_between(span, span - RESIDUE_BAND, span + RESIDUE_BAND, color=self.colors['background'])
            inset.plot(span, span, color=self.colors['accent'], linewidth=1)
            inset.plot(frame['dv_start'], frame['dv_c'], '.', color=self.colors['primary'], markersize=3)
            inset.set_xlabel('dV(0)', fontsize=8)
            inset.set_ylabel('dV_c', fontsize=8)
        else:
            for bw, residues in sweep.residues.items():
                inset.plot(np.full(residues.size, bw), residues, '.', color=self.colors['primary'], markersize=3)
            inset.set_xscale('log')
            inset.axhspan(-RESIDUE_BAND, RESIDUE_BAND, color=self.colors['background'])
            inset.set_ylabel('residue', fontsize=8)
        return self._save(fig, name)

    def plot_fidelity_curve(self, report: 'FidelityReport', name: str = 'gate_fidelity') -> Path:
        frame = report.to_frame()
        fig, ax = plt.subplots(1, 1, figsize=(10, 6))
        ax.plot(frame['dv0'], frame['F_raw_mean'], marker='o', color=self.colors['secondary'], label='noise dV(0)')
        if frame['F_cal_mean'].notna().any():
            ax.errorbar(frame['dv0'], frame['F_cal_mean'], yerr=frame['F_cal_stderr'], marker='s',
                        color=self.colors['primary'], label='residue noise')
        ax.set_xlabel('dV(0)', fontweight='bold')
        ax.set_ylabel('F', fontweight='bold')
        ax.set_title(f"Fidelity of the {report.gate} gate", fontweight='bold')
        ax.legend()
        return self._save(fig, name)

    def plot_schedule(self, result: 'ScheduleResult', calibration_time: float,
                      name: str = 'schedule') -> Path:
        """
        Gantt-style chart of calibrations and gates on the two physical qubits
        """
        fig, ax = plt.subplots(1, 1, figsize=(12, 4))
        rows = {'q1': 1, 'q2': 0}
        for event in result.events:
            row = rows[event.qubit]
            if event.action == 'calibrate':
                ax.barh(row, calibration_time, left=event.t, height=0.5,
                        color=self.colors['primary'], alpha=0.6)
            elif event.action == 'gate':
                ax.plot(event.t, row, 'D', color=self.colors['success'])
                ax.text(event.t, row + 0.3, str(event.detail.get('gate', '')), ha='center', fontsize=8)
            else:
                ax.plot(event.t, row, '|', color=self.colors['accent'], markersize=20)
        ax.set_yticks([0, 1])
        ax.set_yticklabels(['q2', 'q1'])
        ax.set_xlabel('t', fontweight='bold')
        ax.set_title(f"End-to-end fidelity {result.end_to_end_fidelity:.6f}", fontweight='bold')
        return self._save(fig, name)
