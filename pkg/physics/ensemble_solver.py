"""
Ensemble Master Equation
Measurement-dephased two-level dynamics, the relaxation-rate oracle and decay fitting
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.linalg import expm
from scipy.optimize import curve_fit

from config.constants import (
    DECAY_FIT_START_FRACTION,
    DEFAULT_CHECKPOINTS,
    MASTER_METHODS,
    MASTER_STEP_LIMIT,
    EXACT_RATE_ITERATIONS,
    MIN_DECAY_SPAN,
)
from physics.qubit_core import DensityMatrix
from utils.error_handler import (
    ConfigurationError,
    FitFailureError,
    InvalidParameterError,
    NumericalRangeError,
    UndefinedQuantityError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass
class MasterTrace:
    """Checkpointed ensemble-averaged states."""
    times: np.ndarray
    states: List[DensityMatrix]

    @property
    def rho00(self) -> np.ndarray:
        return np.array([s.rho00 for s in self.states])

    @property
    def rho01(self) -> np.ndarray:
        return np.array([s.rho01 for s in self.states])

    def to_frame(self) -> pd.DataFrame:
        rho01 = self.rho01
        return pd.DataFrame({'t': self.times, 'rho00': self.rho00,
                             're_rho01': rho01.real, 'im_rho01': rho01.imag})


@dataclass
class DecayFit:
    """Least-squares relaxation fit of rho00(t) -> 1/2."""
    rate: float
    stderr: float
    amplitude: float
    window_start: float
    n_points: int


def bloch_generator(ez: float, dv: float, gamma_m: float) -> np.ndarray:
    """
    Linear generator L with dr/dt = L r for the Bloch vector r = (x, y, z).

    The Hamiltonian h.sigma with h = (dv, 0, -ez) gives dr/dt = 2 h x r, and the
    double commutator damps x and y at gamma_m.
    """
    hx, hy, hz = dv, 0.0, -ez
    cross = np.array([[0.0, -hz, hy],
                      [hz, 0.0, -hx],
                      [-hy, hx, 0.0]])
    return 2.0 * cross - np.diag([gamma_m, gamma_m, 0.0])


def rk4_propagator(generator: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step for a linear system: the 4th-order Taylor polynomial of exp(L dt)."""
    step = generator * dt
    identity = np.eye(step.shape[0])
    term = identity.copy()
    total = identity.copy()
    for order in range(1, 5):
        term = term @ step / order
        total = total + term
    return total


def integrate_master(rho0: DensityMatrix, ez: float, dv: float, gamma_m: float,
                     duration: float, dt: float, checkpoints: int = DEFAULT_CHECKPOINTS,
                     method: str = 'rk4') -> MasterTrace:
    """
    Integrate the ensemble master equation at fixed dV.

    Args:
        rho0: initial state
        ez: half level splitting
        dv: quasi-static off-diagonal noise
        gamma_m: measurement rate
        duration: total time
        dt: integration step, dt * max(2 E_z, gamma_m) <= 0.1
        checkpoints: number of equal intervals to record
        method: 'rk4' (fixed step) or 'expm' (exact propagator reference)

    Returns:
        MasterTrace with one state per checkpoint plus the start; when the step count is
        not a multiple of the checkpoint spacing the leftover steps add a final state at
        the full duration
    """
    if method not in MASTER_METHODS:
        raise InvalidParameterError(f"unknown master method '{method}', choose from {MASTER_METHODS}")
    if dt <= 0 or dt * max(2.0 * ez, gamma_m) > MASTER_STEP_LIMIT:
        raise ConfigurationError(
            f"dt={dt} violates dt*max(2E_z, gamma_m) <= {MASTER_STEP_LIMIT}",
            invariant=f"dt*max(2E_z, gamma_m) <= {MASTER_STEP_LIMIT}")
    if duration < 0 or checkpoints < 1:
        raise InvalidParameterError("duration must be >= 0 and checkpoints >= 1")

    n_steps = int(round(duration / dt))
    per_checkpoint = max(1, int(round(n_steps / checkpoints)))
    n_checkpoints = n_steps // per_checkpoint

    generator = bloch_generator(ez, dv, gamma_m)
    if method == 'expm':
        propagator = expm(generator * dt * per_checkpoint)
    else:
        step = rk4_propagator(generator, dt)
        propagator = np.linalg.matrix_power(step, per_checkpoint)

    vector = rho0.bloch_vector()
    states = [rho0]
    for _ in range(n_checkpoints):
        vector = propagator @ vector
        states.append(DensityMatrix.from_bloch(vector))
    times = dt * per_checkpoint * np.arange(n_checkpoints + 1)

    remainder = n_steps - n_checkpoints * per_checkpoint
    if remainder:
        tail = expm(generator * dt * remainder) if method == 'expm' else np.linalg.matrix_power(step, remainder)
        vector = tail @ vector
        states.append(DensityMatrix.from_bloch(vector))
        times = np.append(times, dt * n_steps)
    logger.debug("integrated %d steps (%d checkpoints) with %s", n_steps, n_checkpoints, method)
    return MasterTrace(times=times, states=states)


def relaxation_rate(ez: float, gamma_m: float, dv: float) -> float:
    """Second-order rate 4 dV^2 gamma_m / (4 E_z^2 + gamma_m^2)."""
    denominator = 4.0 * ez ** 2 + gamma_m ** 2
    if denominator == 0:
        raise UndefinedQuantityError("relaxation rate undefined for E_z = gamma_m = 0",
                                     invariant="ez > 0 or gamma_m > 0")
    return 4.0 * dv ** 2 * gamma_m / denominator


def exact_relaxation_rate(ez: float, gamma_m: float, dv: ArrayLike) -> ArrayLike:
    """
    Decay rate s of the slow Bloch mode.

    s is the smallest root of s ((gamma_m - s)^2 + 4 E_z^2) = 4 dV^2 (gamma_m - s).
    relaxation_rate is its leading order in dV^2 / E_z^2 and exceeds it by
    about (dV / E_z)^2 relative, 1.4% at dV = 0.82 and E_z = 7.
    """
    if gamma_m <= 0:
        raise InvalidParameterError("the slow mode needs gamma_m > 0")
    coupling_sq = 4.0 * np.asarray(dv, dtype=float) ** 2
    rate = np.asarray(relaxation_rate(ez, gamma_m, np.asarray(dv, dtype=float)), dtype=float)
    # contraction with factor ~ (dV / E_z)^2 from the second-order value
    for _ in range(EXACT_RATE_ITERATIONS):
        remaining = gamma_m - rate
        updated = coupling_sq * remaining / (remaining ** 2 + 4.0 * ez ** 2)
        if np.allclose(updated, rate, rtol=1e-15, atol=0.0):
            rate = updated
            break
        rate = updated
    return float(rate) if np.ndim(dv) == 0 else rate


def coupling_for_rate(rate: ArrayLike, ez: float, gamma_m: float) -> ArrayLike:
    """|dV| whose slow Bloch mode decays at `rate`; the exact inverse of exact_relaxation_rate."""
    if gamma_m <= 0:
        raise InvalidParameterError("the slow mode needs gamma_m > 0")
    s = np.asarray(rate, dtype=float)
    if np.any(s < 0):
        raise InvalidParameterError("relaxation rates cannot be negative")
    if np.any(s >= gamma_m):
        raise NumericalRangeError(
            f"rate {float(np.max(s)):.4g} reaches the measurement rate {gamma_m}; no slow mode",
            invariant="rate < gamma_m")
    remaining = gamma_m - s
    coupling = 0.5 * np.sqrt(s * (remaining ** 2 + 4.0 * ez ** 2) / remaining)
    return float(coupling) if np.ndim(rate) == 0 else coupling


def rate_vs_measurement(ez: float, dv: float, gamma_values: Sequence[float]) -> pd.DataFrame:
    """Relaxation rate over a sweep of measurement rates."""
    gammas = np.asarray(gamma_values, dtype=float)
    rates = np.array([relaxation_rate(ez, g, dv) for g in gammas])
    return pd.DataFrame({'gamma_m': gammas, 'rate': rates})


def zeno_peak_measurement_rate(ez: float) -> float:
    """Measurement rate maximising the relaxation; faster measurement freezes the qubit."""
    return 2.0 * ez


def _decay_model(t, amplitude, rate):
    return 0.5 + amplitude * np.exp(-rate * t)


def fit_decay(series: Union[MasterTrace, np.ndarray], rho00: Optional[np.ndarray] = None,
              start_fraction: float = DECAY_FIT_START_FRACTION) -> DecayFit:
    """
    Fit rho00(t) = 1/2 + A exp(-t / tau) and return 1/tau with its standard error.

    Args:
        series: a MasterTrace, or an array of times with `rho00` given separately
        rho00: population series when `series` is a time array
        start_fraction: the fit window starts at start_fraction * tau from a first estimate

    Returns:
        DecayFit
    """
    if isinstance(series, MasterTrace):
        times, values = series.times, series.rho00
    else:
        times, values = np.asarray(series, dtype=float), np.asarray(rho00, dtype=float)
    if times.size < 4 or times.size != values.size:
        raise FitFailureError("need at least four matching (t, rho00) points",
                              diagnostics={'points': int(times.size)})

    offset = values - 0.5
    initial = offset[0]
    if abs(initial) < 1e-12:
        raise FitFailureError("series starts at 1/2; the decay rate is indeterminate",
                              diagnostics={'rho00(0)': float(values[0])})

    # crude rate from the first 1/e crossing of |rho00 - 1/2|
    crossed = np.flatnonzero(np.abs(offset) <= abs(initial) / np.e)
    if crossed.size == 0:
        raise FitFailureError("no decay detected over the series",
                              diagnostics={'span': float(times[-1] - times[0]),
                                           'final_offset': float(offset[-1]),
                                           'initial_offset': float(initial)})
    rough_rate = 1.0 / max(times[crossed[0]] - times[0], times[1] - times[0])
    span = (times[-1] - times[0]) * rough_rate
    if span < MIN_DECAY_SPAN:
        raise FitFailureError(f"series covers {span:.2f} decay times, need {MIN_DECAY_SPAN}",
                              diagnostics={'rough_rate': rough_rate, 'span_decay_times': span})

    window = times >= times[0] + start_fraction / rough_rate
    t_fit = times[window] - times[0]
    try:
        params, covariance = curve_fit(_decay_model, t_fit, values[window],
                                       p0=(initial, rough_rate), maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        raise FitFailureError(f"least-squares fit failed: {exc}",
                              diagnostics={'rough_rate': rough_rate}) from exc

    amplitude, rate = params
    stderr = float(np.sqrt(np.diag(covariance))[1]) if np.all(np.isfinite(covariance)) else float('nan')
    if not rate > 0:
        raise FitFailureError("fitted rate is not positive", diagnostics={'rate': float(rate)})
    return DecayFit(rate=float(rate), stderr=stderr, amplitude=float(amplitude),
                    window_start=float(times[0] + start_fraction / rough_rate), n_points=int(t_fit.size))
