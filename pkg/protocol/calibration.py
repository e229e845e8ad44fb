"""
Two-Phase Noise Calibration
Switch-count estimation of the off-diagonal noise, sign detection and the error budget
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from config.constants import (
    ALPHA_SQ_UNIT,
    COUNT_MODEL_GRID,
    DEFAULT_HYSTERESIS_FRACTION,
    DEFAULT_MIN_DWELL,
    DEFAULT_N_P,
    DEFAULT_STEPPING_METHOD,
    INSET_BANDWIDTH,
    KNEE_RISE_FACTOR,
    MIN_SWEEP_REPETITIONS,
    RESIDUE_BAND,
    SMALL_COUNT_SHIFT,
)
from config.worker_pool import derive_seed, run_parallel
from physics.detector import DetectorConfig, TrajectoryBatch
from physics.ensemble_solver import coupling_for_rate, exact_relaxation_rate, relaxation_rate
from physics.noise_model import NoiseSource, NoiseSpec, beta_for_rms, sample_noise_model
from physics.qubit_core import DensityMatrix
from protocol.count_response import CountResponse, measure_count_response
from protocol.record_pipeline import (
    TrajectoryRecord,
    binarize,
    count_switchings,
    samples_per_window,
    switch_counts,
)
from utils.error_handler import InvalidParameterError, UndefinedQuantityError

if TYPE_CHECKING:
    from config.experiment_config import ExperimentConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass
class CalibrationResult:
    """Outcome of one two-phase calibration run."""
    dv1: float
    dv2: float
    dv_c: float
    n1: int
    n2: int
    phase_duration: float
    predicted_sigma: float
    true_dv_start: Optional[float] = None
    true_dv_end: Optional[float] = None
    n1_corrected: Optional[float] = None
    n2_corrected: Optional[float] = None
    t0: float = 0.0
    seed: Optional[int] = None
    phase_records: Tuple[TrajectoryRecord, ...] = field(default=(), repr=False)

    @property
    def residue(self) -> Optional[float]:
        """dV_c - dV(T_end), known only when the true noise is."""
        if self.true_dv_end is None:
            return None
        return self.dv_c - self.true_dv_end

    def to_manifest(self) -> Dict[str, object]:
        return {
            'seed': self.seed,
            'dv1': self.dv1,
            'dv2': self.dv2,
            'dv_c': self.dv_c,
            'n1': self.n1,
            'n2': self.n2,
            'n1_corrected': self.n1_corrected,
            'n2_corrected': self.n2_corrected,
            'phase_duration': self.phase_duration,
            'predicted_sigma': self.predicted_sigma,
            'true_dv_start': self.true_dv_start,
            'true_dv_end': self.true_dv_end,
            'residue': self.residue,
        }


def estimate_magnitude(n_jp: ArrayLike, duration: float, ez: float, gamma_m: float) -> ArrayLike:
    """
    |dV| from a switch count by inverting n = T * tau_a^-1 / 2.

    Args:
        n_jp: observed switch count (scalar or array)
        duration: observation time T > 0
        ez: half level splitting
        gamma_m: measurement rate

    Returns:
        sqrt(n (4 E_z^2 + gamma_m^2) / (2 gamma_m T)); zero counts give zero
    """
    if duration <= 0:
        raise InvalidParameterError(f"duration must be positive, got {duration}")
    if gamma_m <= 0:
        raise InvalidParameterError("gamma_m must be positive to invert a switch count")
    counts = np.asarray(n_jp, dtype=float)
    if np.any(counts < 0):
        raise InvalidParameterError("switch counts cannot be negative")
    estimate = np.sqrt(counts * (4.0 * ez ** 2 + gamma_m ** 2) / (2.0 * gamma_m * duration))
    return float(estimate) if np.ndim(n_jp) == 0 else estimate


def combine_estimates(dv1: ArrayLike, dv2: ArrayLike) -> ArrayLike:
    """
    Signed estimate from the two phase magnitudes.

    dv1 >= dv2 means the -dv1/2 shift lowered the coupling, so dV > 0 and
    dV_c = dv1/2 + dv2; otherwise dV_c = -dv1/2 - dv2/3.
    """
    a = np.asarray(dv1, dtype=float)
    b = np.asarray(dv2, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidParameterError("phase estimates are magnitudes and must be >= 0")
    combined = np.where(a >= b, 0.5 * a + b, -0.5 * a - b / 3.0)
    return float(combined) if np.ndim(combined) == 0 else combined


def switching_rate(ez: float, gamma_m: float, dv: ArrayLike) -> ArrayLike:
    """tau_jp^-1 = tau_a^-1 / 2."""
    return 0.5 * relaxation_rate(ez, gamma_m, np.asarray(dv, dtype=float))


def exact_switching_rate(ez: float, gamma_m: float, dv: ArrayLike) -> ArrayLike:
    """Half the exact slow-mode decay rate; switching_rate to leading order."""
    return 0.5 * exact_relaxation_rate(ez, gamma_m, dv)


def expected_switch_count(ez: float, gamma_m: float, dv: float, duration: float) -> float:
    return float(switching_rate(ez, gamma_m, dv)) * duration


def estimate_coupling(n_jp: ArrayLike, duration: float, ez: float, gamma_m: float,
                      response: Optional[CountResponse] = None,
                      n_windows: Optional[int] = None) -> ArrayLike:
    """
    |dV| from an observed switch count with the detector and rate corrections.

    The observed count is mapped to the true count through the trigger's count
    response, shifted by 1/4 so the square-root inversion carries no 1/n bias, and
    turned into |dV| through the exact slow-mode rate. Zero counts still give zero.

    Args:
        n_jp: observed switch count (scalar or array)
        duration: observation time T > 0
        ez: half level splitting
        gamma_m: measurement rate
        response: trigger response; None treats the counts as exact
        n_windows: windows per phase, needed with a response

    Returns:
        |dV| estimate with the shape of n_jp
    """
    if duration <= 0:
        raise InvalidParameterError(f"duration must be positive, got {duration}")
    counts = np.asarray(n_jp, dtype=float)
    if np.any(counts < 0):
        raise InvalidParameterError("switch counts cannot be negative")
    if response is not None:
        if not n_windows:
            raise InvalidParameterError("a count response needs the number of windows")
        counts = np.asarray(response.true_count(counts, n_windows), dtype=float)
    shifted = np.where(counts > 0, counts + SMALL_COUNT_SHIFT, 0.0)
    estimate = coupling_for_rate(2.0 * shifted / duration, ez, gamma_m)
    return float(estimate) if np.ndim(n_jp) == 0 else estimate


def statistical_uncertainty(ez: float, gamma_m: float, duration: float) -> float:
    """Poisson variance of the phase-one estimate, (4 E_z^2 + gamma_m^2) / (8 gamma_m T)."""
    if duration <= 0:
        raise InvalidParameterError(f"duration must be positive, got {duration}")
    return (4.0 * ez ** 2 + gamma_m ** 2) / (8.0 * gamma_m * duration)


def combined_uncertainty(ez: float, gamma_m: float, duration: float, positive: bool = True,
                         inflation: Tuple[float, float] = (1.0, 1.0)) -> float:
    """
    Variance of dV_c through the piecewise rule.

    Phase two measures |dV - dv1/2|, so its estimate carries dv1's error. For dV > 0
    the two cancel and dV_c has the phase-two variance alone. For dV < 0 the phase
    errors e1, e2 enter as dV_c = dV - (2/3) e1 - e2 / 3, which leaves 5/9 of it.
    `inflation` scales each phase's variance for a detector that loses switches.
    """
    k1, k2 = inflation
    weight = k2 if positive else (4.0 * k1 + k2) / 9.0
    return weight * statistical_uncertainty(ez, gamma_m, duration)


def count_variance_factors(response: CountResponse, ez: float, gamma_m: float, dv: float,
                           n_p: int) -> Tuple[float, float]:
    """Per-phase variance inflation of the corrected counts at a noise value dV."""
    duration = phase_duration_for(n_p, gamma_m)
    first = exact_switching_rate(ez, gamma_m, dv) * duration
    second = exact_switching_rate(ez, gamma_m, dv - 0.5 * abs(dv)) * duration
    return float(response.variance_factor(first, n_p)), float(response.variance_factor(second, n_p))


def drift_variance(spec: NoiseSpec, duration: float, alpha_sq: float = ALPHA_SQ_UNIT) -> float:
    """
    Small-T variance of dV(T) - dV(0): (beta * alpha_sq / 2) * sum_n w_n * T^2.

    With alpha_sq = 1/3 this is the closed form beta B_w^2 T^2 / (12 delta_omega)
    up to the discrete harmonic sum.
    """
    if duration < 0:
        raise InvalidParameterError("duration must be non-negative")
    if spec.band_width * duration > 1.0:
        logger.warning("B_w*T = %.3g is not << 1; the quadratic drift formula is outside its range",
                       spec.band_width * duration)
    return 0.5 * spec.beta * alpha_sq * float(np.sum(spec.frequencies)) * duration ** 2


def _error_terms(ez: float, gamma_m: float, spec: NoiseSpec, alpha_sq: float) -> Tuple[float, float]:
    a = (4.0 * ez ** 2 + gamma_m ** 2) / (8.0 * gamma_m)
    c = 0.5 * spec.beta * alpha_sq * float(np.sum(spec.frequencies))
    if a <= 0 or c <= 0:
        raise InvalidParameterError("optimal time needs positive statistical and drift coefficients")
    return a, c


def optimal_time(ez: float, gamma_m: float, spec: NoiseSpec, alpha_sq: float = ALPHA_SQ_UNIT) -> float:
    """T* = (A / 2C)^(1/3) minimising A/T + C T^2."""
    a, c = _error_terms(ez, gamma_m, spec, alpha_sq)
    return (a / (2.0 * c)) ** (1.0 / 3.0)


def optimal_time_numeric(ez: float, gamma_m: float, spec: NoiseSpec,
                         alpha_sq: float = ALPHA_SQ_UNIT) -> float:
    """Golden-section minimum of the explicit error sum over log T."""
    a, c = _error_terms(ez, gamma_m, spec, alpha_sq)

    def total(log_t: float) -> float:
        t = math.exp(log_t)
        return a / t + c * t * t

    grid = np.linspace(-20.0, 60.0, 801)
    values = np.array([total(x) for x in grid])
    best = int(np.clip(np.argmin(values), 1, grid.size - 2))
    result = minimize_scalar(total, bracket=(grid[best - 1], grid[best], grid[best + 1]),
                             method='golden', tol=1e-12)
    return float(math.exp(result.x))


def dephasing_reduction_factor(dv_c: float, dv_end: float, dv_start: float) -> float:
    """|(dV_c - dV_end) / dV_start|^4."""
    if dv_start == 0:
        raise UndefinedQuantityError("reduction factor undefined for dV(0) = 0",
                                     invariant="dv_start != 0")
    return abs((dv_c - dv_end) / dv_start) ** 4


def phase_duration_for(n_p: int, gamma_m: float) -> float:
    """Each phase lasts 2 n_p / gamma_m."""
    return 2.0 * n_p / gamma_m


def _phase_records(segment, bits_list, stamps_list) -> List[TrajectoryRecord]:
    records = []
    for m, (bits, stamps) in enumerate(zip(bits_list, stamps_list)):
        records.append(TrajectoryRecord(
            dt=segment.dt, raw=segment.raw[m], t0=float(segment.t_start[m]),
            dv_true=segment.dv_true[m], window_times=segment.window_times(m),
            windowed=segment.windowed[m], bits=bits, switches=stamps))
    return records


def _count_phase(segment, cfg: DetectorConfig, hysteresis_fraction: float, min_dwell: int,
                 keep_records: bool):
    bits = binarize(segment.windowed, cfg, hysteresis_fraction, min_dwell)
    counts = switch_counts(bits)
    if not keep_records:
        return counts, None, None
    stamps_list = [count_switchings(bits[m], segment.window_times(m))[1] for m in range(bits.shape[0])]
    return counts, list(bits), stamps_list


def run_calibration_batch(ez: float, cfg: DetectorConfig,
                          noise: Union[NoiseSource, Sequence[NoiseSource]],
                          n_p: int = DEFAULT_N_P, seed: int = 0, size: Optional[int] = None,
                          t0: Union[float, np.ndarray] = 0.0, first_index: int = 0,
                          hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION,
                          min_dwell: int = DEFAULT_MIN_DWELL,
                          method: str = DEFAULT_STEPPING_METHOD,
                          keep_records: bool = False,
                          count_correction: bool = True) -> List[CalibrationResult]:
    """
    Run many independent two-phase calibrations in lock-step.

    Args:
        ez: half level splitting
        cfg: detector configuration
        noise: one shared source or one source per run
        n_p: windows per phase; each phase lasts 2 n_p / gamma_m
        seed: master seed; run m uses the stream (seed, first_index + m)
        size: number of runs (defaults to the number of noise sources)
        t0: start time of each run on its noise clock
        first_index: stream index of the first run
        hysteresis_fraction: Schmitt-trigger guard band
        min_dwell: windows needed to confirm a switch
        method: Hamiltonian stepping method
        keep_records: attach full per-phase records (raw samples are large)
        count_correction: undo the trigger's missed switches and invert through the
            exact slow-mode rate; False applies the second-order formula to raw counts

    Returns:
        list of CalibrationResult, one per run
    """
    if size is None:
        size = 1 if hasattr(noise, 'values') else len(noise)
    if n_p < 1:
        raise InvalidParameterError("n_p must be at least 1")

    gamma_m = cfg.gamma_m
    duration = phase_duration_for(n_p, gamma_m)
    window = samples_per_window(cfg.dt, gamma_m)
    sigma = math.sqrt(statistical_uncertainty(ez, gamma_m, duration))
    response = measure_count_response(cfg, hysteresis_fraction, min_dwell) if count_correction else None

    def invert(counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if response is None:
            return estimate_magnitude(counts, duration, ez, gamma_m), counts.astype(float)
        return (estimate_coupling(counts, duration, ez, gamma_m, response, n_p),
                response.true_count(counts, n_p))

    batch = TrajectoryBatch.from_seed(cfg, ez, seed, size, rho0=DensityMatrix.ground(), t0=t0,
                                      method=method, first_index=first_index)
    dv_start = batch.noise_now(noise)

    first = batch.advance(duration, noise, shift=0.0, keep_raw=keep_records, samples_per_window=window)
    n1, bits1, stamps1 = _count_phase(first, cfg, hysteresis_fraction, min_dwell, keep_records)
    dv1, true1 = invert(n1)

    # phase two continues the same noise clock and state with the coupling lowered by dv1/2
    second = batch.advance(duration, noise, shift=-0.5 * dv1, keep_raw=keep_records, samples_per_window=window)
    n2, bits2, stamps2 = _count_phase(second, cfg, hysteresis_fraction, min_dwell, keep_records)
    dv2, true2 = invert(n2)
    dv_c = np.atleast_1d(combine_estimates(dv1, dv2))

    records_1 = _phase_records(first, bits1, stamps1) if keep_records else None
    records_2 = _phase_records(second, bits2, stamps2) if keep_records else None

    results = []
    for m in range(size):
        results.append(CalibrationResult(
            dv1=float(dv1[m]), dv2=float(dv2[m]), dv_c=float(dv_c[m]),
            n1=int(n1[m]), n2=int(n2[m]), phase_duration=duration, predicted_sigma=sigma,
            true_dv_start=float(dv_start[m]), true_dv_end=float(second.dv_end[m]),
            n1_corrected=float(true1[m]), n2_corrected=float(true2[m]),
            t0=float(first.t_start[m]), seed=seed,
            phase_records=(records_1[m], records_2[m]) if keep_records else ()))
    logger.info("calibrated %d run(s): mean n1=%.2f, mean n2=%.2f", size, n1.mean(), n2.mean())
    return results


def run_calibration(ez: float, cfg: DetectorConfig, noise: NoiseSource, n_p: int = DEFAULT_N_P,
                    seed: int = 0, t0: float = 0.0, index: int = 0,
                    hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION,
                    min_dwell: int = DEFAULT_MIN_DWELL, method: str = DEFAULT_STEPPING_METHOD,
                    keep_records: bool = False, count_correction: bool = True) -> CalibrationResult:
    """Single two-phase calibration starting from |0>."""
    return run_calibration_batch(ez, cfg, noise, n_p=n_p, seed=seed, size=1, t0=t0, first_index=index,
                                 hysteresis_fraction=hysteresis_fraction, min_dwell=min_dwell,
                                 method=method, keep_records=keep_records,
                                 count_correction=count_correction)[0]


def _expected_phase_count(ez: float, gamma_m: float, noise: NoiseSource, start: float,
                          duration: float, shift: float) -> float:
    times = start + np.linspace(0.0, duration, COUNT_MODEL_GRID)
    rates = exact_switching_rate(ez, gamma_m, noise.values(times) + shift)
    return float(trapezoid(rates, times))


def run_calibration_counts(ez: float, gamma_m: float, noise: NoiseSource, n_p: int = DEFAULT_N_P,
                           rng: Optional[np.random.Generator] = None, seed: Optional[int] = None,
                           t0: float = 0.0, count_correction: bool = True) -> CalibrationResult:
    """
    Count-level version of the protocol.

    Each phase's switch count is drawn from a Poisson law whose mean is the
    integrated slow-mode switching rate along the true noise, so no trajectories are
    simulated and no switch is missed. count_correction picks the inversion as in
    run_calibration_batch.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    duration = phase_duration_for(n_p, gamma_m)

    def invert(count: int) -> float:
        if count_correction:
            return estimate_coupling(count, duration, ez, gamma_m)
        return estimate_magnitude(count, duration, ez, gamma_m)

    n1 = int(rng.poisson(_expected_phase_count(ez, gamma_m, noise, t0, duration, 0.0)))
    dv1 = invert(n1)
    n2 = int(rng.poisson(_expected_phase_count(ez, gamma_m, noise, t0 + duration, duration, -0.5 * dv1)))
    dv2 = invert(n2)

    return CalibrationResult(
        dv1=dv1, dv2=dv2, dv_c=combine_estimates(dv1, dv2), n1=n1, n2=n2,
        phase_duration=duration,
        predicted_sigma=math.sqrt(statistical_uncertainty(ez, gamma_m, duration)),
        true_dv_start=float(noise.values(np.array([t0]))[0]),
        true_dv_end=float(noise.values(np.array([t0 + 2.0 * duration]))[0]),
        n1_corrected=float(n1), n2_corrected=float(n2),
        t0=t0, seed=seed)


@dataclass
class SweepResult:
    """
    Mean squared residue per band width, the residues behind each point and the
    per-run (dV(0), dV_c, dV(T_end)) estimates.
    """
    table: pd.DataFrame
    residues: Dict[float, np.ndarray]
    estimates: Dict[float, pd.DataFrame] = field(default_factory=dict)

    def knee_ratio(self) -> float:
        """Residue at the widest band over the narrowest."""
        ordered = self.table.sort_values('B_w')
        return float(ordered['mean_sq_residue'].iloc[-1] / ordered['mean_sq_residue'].iloc[0])

    def knee_bandwidth(self, rise: float = KNEE_RISE_FACTOR) -> float:
        """
        Band width where the mean squared residue first reaches `rise` times its
        narrow-band value, interpolated on log-log axes.
        """
        ordered = self.table.sort_values('B_w')
        bw = np.log(ordered['B_w'].to_numpy(dtype=float))
        res = np.log(ordered['mean_sq_residue'].to_numpy(dtype=float))
        level = res[0] + math.log(rise)
        above = np.flatnonzero(res >= level)
        if above.size == 0 or above[0] == 0:
            raise UndefinedQuantityError(
                f"the residue never rises {rise}x above its narrowest-band value",
                invariant="a residue knee inside the swept band widths")
        k = int(above[0])
        fraction = (level - res[k - 1]) / (res[k] - res[k - 1])
        return float(math.exp(bw[k - 1] + fraction * (bw[k] - bw[k - 1])))

    def inset(self, bandwidth: float = INSET_BANDWIDTH) -> pd.DataFrame:
        """Per-run estimates at the swept band width nearest `bandwidth`."""
        if not self.estimates:
            raise UndefinedQuantityError("sweep carries no per-run estimates")
        nearest = min(self.estimates, key=lambda bw: abs(math.log(bw / bandwidth)))
        return self.estimates[nearest]

    def fraction_near_start(self, bandwidth: float = INSET_BANDWIDTH, band: float = RESIDUE_BAND) -> float:
        """Share of runs at that band width with |dV_c - dV(0)| <= band."""
        frame = self.inset(bandwidth)
        return float(np.mean(np.abs(frame['dv_c'] - frame['dv_start']) <= band))


def sweep_noise_spec(bandwidth: float, n_components: int, target_rms: float) -> NoiseSpec:
    """N components spanning B_w with beta set for the requested RMS."""
    delta_omega = bandwidth / n_components
    return NoiseSpec(beta=beta_for_rms(target_rms, delta_omega, n_components),
                     delta_omega=delta_omega, n_components=n_components)


def _sweep_point(config: 'ExperimentConfig', bandwidth: float, repetitions: int,
                 point_seed: int, mode: str) -> pd.DataFrame:
    cfg = config.detector
    protocol = config.protocol
    spec = sweep_noise_spec(bandwidth, config.sweep.n_components, config.sweep.target_rms)
    noises = [sample_noise_model(spec, derive_seed(point_seed, r)) for r in range(repetitions)]

    if mode == 'counts':
        results = [run_calibration_counts(config.ez, cfg.gamma_m, noise, protocol.n_p,
                                          rng=np.random.default_rng(derive_seed(point_seed, r, 1)),
                                          count_correction=protocol.count_correction)
                   for r, noise in enumerate(noises)]
    else:
        results = run_calibration_batch(config.ez, cfg, noises, n_p=protocol.n_p,
                                        seed=point_seed, size=repetitions,
                                        hysteresis_fraction=protocol.hysteresis_fraction,
                                        min_dwell=protocol.min_dwell, method=config.run.method,
                                        count_correction=protocol.count_correction)
    return pd.DataFrame({
        'dv_start': [r.true_dv_start for r in results],
        'dv_c': [r.dv_c for r in results],
        'dv_end': [r.true_dv_end for r in results],
        'residue': [r.residue for r in results],
    })


def bandwidth_sweep(config: 'ExperimentConfig', bandwidths: Optional[Sequence[float]] = None,
                    repetitions: Optional[int] = None, seed: Optional[int] = None,
                    jobs: int = 1, mode: Optional[str] = None) -> SweepResult:
    """
    Mean squared calibration residue |dV_c - dV(T_end)|^2 against noise band width.

    Every point draws fresh noise realisations with N = sweep.n_components,
    delta_omega = B_w / N and beta chosen for sweep.target_rms.
    """
    bandwidths = list(config.sweep.bandwidths if bandwidths is None else bandwidths)
    repetitions = config.run.repetitions if repetitions is None else repetitions
    seed = config.run.seed if seed is None else seed
    mode = config.sweep.mode if mode is None else mode
    if repetitions < MIN_SWEEP_REPETITIONS:
        raise InvalidParameterError(
            f"bandwidth sweep needs >= {MIN_SWEEP_REPETITIONS} repetitions per point, got {repetitions}",
            invariant=f"repetitions >= {MIN_SWEEP_REPETITIONS}")
    if not bandwidths:
        raise InvalidParameterError("no band widths to sweep")

    tasks = [(config, float(bw), repetitions, derive_seed(seed, k), mode) for k, bw in enumerate(bandwidths)]
    outcomes = run_parallel(_sweep_point, tasks, jobs)

    gamma_m = config.detector.gamma_m
    duration = phase_duration_for(config.protocol.n_p, gamma_m)
    rows, residues, estimates = [], {}, {}
    for bw, frame in zip(bandwidths, outcomes):
        res = frame['residue'].to_numpy(dtype=float)
        squared = res ** 2
        spec = sweep_noise_spec(bw, config.sweep.n_components, config.sweep.target_rms)
        rows.append({
            'B_w': float(bw),
            'mean_sq_residue': float(squared.mean()),
            'stderr': float(squared.std(ddof=1) / math.sqrt(squared.size)),
            'mean_sq_noise': float(np.mean(frame['dv_end'] ** 2)),
            'predicted_statistical': statistical_uncertainty(config.ez, gamma_m, duration),
            'predicted_drift': drift_variance(spec, 2.0 * duration),
            'fraction_within_band': float(np.mean(np.abs(res) <= RESIDUE_BAND)),
        })
        residues[float(bw)] = res
        estimates[float(bw)] = frame
        logger.info("B_w=%.3g: mean squared residue %.4g", bw, rows[-1]['mean_sq_residue'])
    return SweepResult(table=pd.DataFrame(rows), residues=residues, estimates=estimates)


def protocol_threshold_bandwidth(n_p: int, gamma_m: float) -> float:
    """(4 n_p / gamma_m)^-1, the band width above which drift dominates the residue."""
    return gamma_m / (4.0 * n_p)
