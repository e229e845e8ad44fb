"""
Qubit noise calibration experiment runner.

    python main.py trajectory      --preset baseline --out output/trajectory
    python main.py ensemble        --config configs/baseline.json
    python main.py calibrate       --seed 7
    python main.py sweep-bandwidth --config configs/bandwidth_sweep.json --jobs 4
    python main.py gate-fidelity   --config configs/gate_fidelity.json
    python main.py schedule        --ops bitflip,hadamard,bitflip
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config.constants import ENV_LOG_LEVEL, EXIT_OK, PROJECT_NAME, RUN_PRESETS
from config.experiment_config import ExperimentConfig, get_preset, load_config
from config.worker_pool import default_jobs
from physics.detector import run_trajectory
from physics.ensemble_solver import (
    fit_decay,
    integrate_master,
    rate_vs_measurement,
    relaxation_rate,
    zeno_peak_measurement_rate,
)
from physics.qubit_core import DensityMatrix
from protocol.calibration import (
    bandwidth_sweep,
    combined_uncertainty,
    count_variance_factors,
    dephasing_reduction_factor,
    drift_variance,
    optimal_time,
    protocol_threshold_bandwidth,
    run_calibration,
    statistical_uncertainty,
)
from protocol.count_response import measure_count_response
from protocol.gates import (
    PoissonCountResidues,
    TrajectoryResidues,
    build_gate,
    fidelity_curve,
    fit_quadratic_infidelity,
    infidelity_slope,
)
from protocol.record_pipeline import process_record, record_frames
from team.alternating_schedule import alternating_schedule
from tools.experiment_tools import ExperimentTools, get_experiment_tools
from utils.error_handler import (
    FitFailureError,
    InvalidParameterError,
    SimulationErrorHandler,
    UndefinedQuantityError,
)
from utils.regime_analyzer import RegimeAnalyzer

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load --config or --preset and apply the command-line overrides."""
    config = load_config(args.config) if args.config else get_preset(args.preset)
    run: Dict[str, Any] = {}
    if args.seed is not None:
        run['seed'] = args.seed
    if args.euler:
        run['method'] = 'euler'
    if args.out:
        run['output_dir'] = args.out
    return config.with_overrides(run=run) if run else config


def cmd_trajectory(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                   out: Path) -> Dict[str, Any]:
    """Single selective trajectory: raw, windowed and filtered records."""
    duration = args.duration if args.duration is not None else 2.0 * config.phase_duration
    with tools.timed('trajectory'):
        record = run_trajectory(DensityMatrix.ground(), config.ez, config.noise.source(), config.detector,
                                duration, seed=config.run.seed, method=config.run.method,
                                log_every=config.run.log_every)
        record = process_record(record, config.detector, config.protocol.hysteresis_fraction,
                                config.protocol.min_dwell)

    raw, windowed = record_frames(record)
    tools.export_table(raw, out / 'raw.csv')
    tools.export_table(windowed, out / 'windowed.csv')
    tools.export_table(pd.DataFrame({'t': record.switches}), out / 'switches.csv')
    if record.state_log is not None:
        tools.export_table(record.state_log, out / 'states.csv')
    if args.plots:
        from utils.visualization import CalibrationVisualizer
        CalibrationVisualizer(out).plot_trajectory(record, config.detector)

    print(f"✅ {record.raw.size} samples, {windowed.shape[0]} windows, {record.switch_count} switches")
    return {'duration': duration, 'samples': int(record.raw.size), 'windows': int(windowed.shape[0]),
            'switch_count': record.switch_count}


def cmd_ensemble(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                 out: Path) -> Dict[str, Any]:
    """Ensemble master equation at fixed dV, decay fit and the measurement-rate scan."""
    settings = config.ensemble
    gamma_m = config.gamma_m
    analytic = relaxation_rate(config.ez, gamma_m, settings.dv)
    duration = args.duration if args.duration is not None else settings.duration
    if duration is None:
        duration = 5.0 / analytic if analytic > 0 else 100.0 / gamma_m

    with tools.timed('ensemble'):
        trace = integrate_master(DensityMatrix.ground(), config.ez, settings.dv, gamma_m, duration,
                                 settings.dt, settings.checkpoints, settings.method)
    tools.export_table(trace.to_frame(), out / 'ensemble_trace.csv')
    tools.export_table(rate_vs_measurement(config.ez, settings.dv, settings.gamma_values),
                       out / 'rate_vs_gamma.csv')

    results: Dict[str, Any] = {'duration': duration, 'analytic_rate': analytic,
                               'zeno_peak_gamma_m': zeno_peak_measurement_rate(config.ez)}
    try:
        fit = fit_decay(trace)
    except FitFailureError as exc:
        print(f"⚠️ No decay detected: {exc}")
        results.update({'decay_detected': False, 'fit_diagnostics': exc.diagnostics})
    else:
        relative = abs(fit.rate - analytic) / analytic if analytic > 0 else float('nan')
        print(f"✅ fitted rate {fit.rate:.6g} (analytic {analytic:.6g}, relative error {relative:.2%})")
        results.update({'decay_detected': True, 'fitted_rate': fit.rate, 'fitted_stderr': fit.stderr,
                        'relative_error': relative, 'fit_window_start': fit.window_start})

    if args.plots:
        from utils.visualization import CalibrationVisualizer
        CalibrationVisualizer(out).plot_ensemble(trace, analytic)
    return results


def cmd_calibrate(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                  out: Path) -> Dict[str, Any]:
    """One two-phase calibration run against the configured noise."""
    protocol = config.protocol
    with tools.timed('calibration'):
        result = run_calibration(config.ez, config.detector, config.noise.source(), n_p=protocol.n_p,
                                 seed=config.run.seed, hysteresis_fraction=protocol.hysteresis_fraction,
                                 min_dwell=protocol.min_dwell, method=config.run.method, keep_records=True,
                                 count_correction=protocol.count_correction)

    for phase, record in enumerate(result.phase_records, start=1):
        _, windowed = record_frames(record)
        tools.export_table(windowed, out / f'phase{phase}_windowed.csv')
    if args.plots and result.phase_records:
        from utils.visualization import CalibrationVisualizer
        visualizer = CalibrationVisualizer(out)
        for phase, record in enumerate(result.phase_records, start=1):
            visualizer.plot_trajectory(record, config.detector, name=f'phase{phase}')

    duration = result.phase_duration
    inflation = (1.0, 1.0)
    if protocol.count_correction:
        response = measure_count_response(config.detector, protocol.hysteresis_fraction, protocol.min_dwell)
        inflation = count_variance_factors(response, config.ez, config.gamma_m, result.dv_c, protocol.n_p)
    summary = result.to_manifest()
    summary.update({
        'statistical_variance': statistical_uncertainty(config.ez, config.gamma_m, duration),
        'combined_variance': combined_uncertainty(config.ez, config.gamma_m, duration, result.dv_c >= 0,
                                                  inflation),
        'count_variance_factors': list(inflation),
        'optimal_time': optimal_time(config.ez, config.gamma_m, config.noise.spec),
    })
    if config.noise.static_dv is None:
        summary['drift_variance'] = drift_variance(config.noise.spec, 2.0 * duration)
    if result.true_dv_start:
        summary['dephasing_reduction_factor'] = dephasing_reduction_factor(
            result.dv_c, result.true_dv_end, result.true_dv_start)

    print(f"✅ n1={result.n1}, n2={result.n2} -> dV1={result.dv1:.4f}, dV2={result.dv2:.4f}, "
          f"dV_c={result.dv_c:.4f} (true dV(T)={result.true_dv_end:.4f})")
    return summary


def cmd_sweep_bandwidth(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                        out: Path) -> Dict[str, Any]:
    """Mean squared residue against noise band width."""
    with tools.timed('bandwidth sweep'):
        sweep = bandwidth_sweep(config, jobs=args.jobs)
    tools.export_table(sweep.table, out / 'bandwidth_sweep.csv')
    long = pd.DataFrame([{'B_w': bw, 'repetition': r, 'residue': value}
                         for bw, residues in sweep.residues.items() for r, value in enumerate(residues)])
    tools.export_table(long, out / 'residues.csv')
    estimates = pd.concat([frame.assign(B_w=bw) for bw, frame in sweep.estimates.items()], ignore_index=True)
    tools.export_table(estimates, out / 'estimates.csv')

    threshold = protocol_threshold_bandwidth(config.protocol.n_p, config.gamma_m)
    try:
        knee = sweep.knee_bandwidth()
    except UndefinedQuantityError as exc:
        logger.warning("%s", exc)
        knee = None
    if args.plots:
        from utils.visualization import CalibrationVisualizer
        CalibrationVisualizer(out).plot_bandwidth_sweep(sweep, threshold)
    print(f"✅ {len(sweep.table)} band widths, residue ratio widest/narrowest {sweep.knee_ratio():.3g}")
    return {'threshold_band_width': threshold, 'knee_band_width': knee, 'knee_ratio': sweep.knee_ratio(),
            'fraction_near_start': sweep.fraction_near_start(),
            'mode': config.sweep.mode, 'table': sweep.table.to_dict(orient='list')}


def cmd_gate_fidelity(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                      out: Path) -> Dict[str, Any]:
    """Gate fidelity with raw and calibrated noise."""
    settings = config.gates
    gate = build_gate(settings.gate, config.ez)
    if settings.residue_mode == 'trajectory':
        source = TrajectoryResidues(config.ez, config.detector, config.protocol.n_p,
                                    config.protocol.hysteresis_fraction, config.protocol.min_dwell,
                                    config.run.method, config.protocol.count_correction)
    else:
        source = PoissonCountResidues(config.ez, config.gamma_m, config.protocol.n_p,
                                      config.protocol.count_correction)

    with tools.timed('fidelity curve'):
        report = fidelity_curve(gate, settings.dv_values, source, settings.realizations,
                                seed=config.run.seed, jobs=args.jobs)
    tools.export_table(report.to_frame(), out / 'gate_fidelity.csv')

    nonzero = report.noise_values != 0
    results: Dict[str, Any] = {
        'gate': gate.name,
        'residue_mode': settings.residue_mode,
        'infidelity_slope': infidelity_slope(gate, np.logspace(-3, -1, 9)),
        'min_calibrated_fidelity': float(np.min(report.fidelity_calibrated)),
    }
    if np.count_nonzero(nonzero):
        c, r_squared = fit_quadratic_infidelity(report.noise_values, report.fidelity_raw)
        results.update({'quadratic_coefficient': c, 'quadratic_r_squared': r_squared})
    if args.plots:
        from utils.visualization import CalibrationVisualizer
        CalibrationVisualizer(out).plot_fidelity_curve(report)
    print(f"✅ {gate.name}: min calibrated fidelity {results['min_calibrated_fidelity']:.4f}")
    return results


def cmd_schedule(config: ExperimentConfig, args: argparse.Namespace, tools: ExperimentTools,
                 out: Path) -> Dict[str, Any]:
    """Alternating two-qubit calibration schedule for a gate sequence."""
    ops = [op.strip() for op in args.ops.split(',') if op.strip()]
    with tools.timed('schedule'):
        result = alternating_schedule(ops, config)
    (out / 'schedule.json').write_text(result.to_json() + "\n", encoding="utf-8")
    tools.export_table(result.to_frame(), out / 'schedule_events.csv')
    if args.plots:
        from utils.visualization import CalibrationVisualizer
        CalibrationVisualizer(out).plot_schedule(result, 2.0 * config.phase_duration)
    print(f"✅ {len(ops)} op(s), end-to-end fidelity {result.end_to_end_fidelity:.6f}")
    return {'ops': ops, 'end_to_end_fidelity': result.end_to_end_fidelity,
            'fidelity_product': result.fidelity_product, 'segment_fidelities': result.segment_fidelities}


COMMANDS: Dict[str, Callable[..., Dict[str, Any]]] = {
    'trajectory': cmd_trajectory,
    'ensemble': cmd_ensemble,
    'calibrate': cmd_calibrate,
    'sweep-bandwidth': cmd_sweep_bandwidth,
    'gate-fidelity': cmd_gate_fidelity,
    'schedule': cmd_schedule,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROJECT_NAME, description="Continuous-measurement noise calibration")
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument('--config', type=Path, help='JSON experiment file')
    source.add_argument('--preset', choices=sorted(RUN_PRESETS), default='baseline')
    common.add_argument('--seed', type=int, help='master seed (overrides run.seed)')
    common.add_argument('--jobs', type=int, default=default_jobs(), help='worker processes')
    common.add_argument('--out', type=str, help='output directory (overrides run.output_dir)')
    common.add_argument('--duration', type=float, help='override the simulated duration')
    common.add_argument('--euler', action='store_true', help='first-order Hamiltonian stepping')
    common.add_argument('--plots', action='store_true', help='write SVG quick-look plots')
    common.add_argument('--log-level', default=os.getenv(ENV_LOG_LEVEL, 'INFO'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, func in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=func.__doc__)
        if name == 'schedule':
            sub.add_argument('--ops', required=True, help='comma-separated gate names')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    handler = SimulationErrorHandler()
    tools = get_experiment_tools()

    try:
        if args.duration is not None and args.duration < 0:
            raise InvalidParameterError(f"--duration must be non-negative, got {args.duration}")
        config = build_config(args)
        out = Path(config.run.output_dir)
        out.mkdir(parents=True, exist_ok=True)

        regime = RegimeAnalyzer().analyze(config)
        results = COMMANDS[args.command](config, args, tools, out)
        tools.export_manifest({
            'command': args.command,
            'config': config.model_dump(mode='json'),
            'seed': config.run.seed,
            'noise_seed': config.noise.noise_seed,
            'gamma_m': config.gamma_m,
            'overrides': {'duration': args.duration, 'euler': args.euler},
            'regime': regime.to_dict(),
            'results': results,
        }, out)
        print(f"✅ Results written to {out}")
        return EXIT_OK

    except Exception as exc:
        analysis = handler.analyze_error(exc)
        print(handler.format_error_report(analysis), file=sys.stderr)
        logger.debug(handler.format_traceback(exc))
        return analysis.exit_code


if __name__ == "__main__":
    sys.exit(main())
