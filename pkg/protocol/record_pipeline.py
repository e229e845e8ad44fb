"""
Measurement Record Pipeline
Window averaging, Schmitt-trigger binarisation and switch counting of detector currents
"""

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config.constants import (
    DEFAULT_HYSTERESIS_FRACTION,
    DEFAULT_MIN_DWELL,
    MIN_SAMPLES_PER_WINDOW,
    POISSON_MIN_EXPECTED,
)
from utils.error_handler import ConfigurationError, InvalidParameterError

if TYPE_CHECKING:
    from physics.detector import DetectorConfig

logger = logging.getLogger(__name__)


@dataclass
class TrajectoryRecord:
    """Raw detector current plus the derived window, bit and switch series."""
    dt: float
    raw: np.ndarray
    t0: float = 0.0
    dv_true: Optional[np.ndarray] = None
    state_log: Optional[pd.DataFrame] = None
    window_times: Optional[np.ndarray] = None
    windowed: Optional[np.ndarray] = None
    bits: Optional[np.ndarray] = None
    switches: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.raw.size)

    @property
    def duration(self) -> float:
        return self.raw.size * self.dt

    @property
    def switch_count(self) -> int:
        return 0 if self.switches is None else int(self.switches.size)


def samples_per_window(dt: float, gamma_m: float) -> int:
    """Number of raw samples in one 2/gamma_m window."""
    count = int(round(2.0 / (gamma_m * dt)))
    if count < MIN_SAMPLES_PER_WINDOW:
        raise ConfigurationError(
            f"window 2/gamma_m holds {count} samples, need at least {MIN_SAMPLES_PER_WINDOW}",
            invariant=f"window length 2/gamma_m contains >= {MIN_SAMPLES_PER_WINDOW} samples",
        )
    return count


def block_means(values: np.ndarray, block: int, axis: int = 0) -> np.ndarray:
    """Non-overlapping block means along `axis`; the trailing partial block is dropped."""
    values = np.moveaxis(np.asarray(values), axis, 0)
    n_blocks = values.shape[0] // block
    trimmed = values[:n_blocks * block]
    means = trimmed.reshape((n_blocks, block) + values.shape[1:]).mean(axis=1)
    return np.moveaxis(means, 0, axis)


def window_average(raw: np.ndarray, dt: float, gamma_m: float,
                   t0: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Average the current over consecutive 2/gamma_m windows.

    Args:
        raw: detector current samples spaced by dt
        dt: sampling interval
        gamma_m: measurement rate
        t0: time of the first sample

    Returns:
        (window start times, window means)
    """
    block = samples_per_window(dt, gamma_m)
    means = block_means(np.asarray(raw, dtype=float), block)
    times = t0 + block * dt * np.arange(means.size)
    return times, means


def binarize(windowed: np.ndarray, cfg: 'DetectorConfig',
             hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION,
             min_dwell: int = DEFAULT_MIN_DWELL) -> np.ndarray:
    """
    Schmitt-trigger the window means into qubit-state bits.

    The output switches to 1 once the mean sits beyond midpoint + h*dI towards I1 for
    `min_dwell` consecutive windows, and back to 0 symmetrically. The first bit is the
    nearest level. min_dwell=1 is the plain trigger. A 2-D input is one record per row.
    """
    if not 0.0 <= hysteresis_fraction < 0.5:
        raise InvalidParameterError(
            f"hysteresis_fraction={hysteresis_fraction} outside [0, 0.5)",
            invariant="hysteresis_fraction in [0, 0.5)")
    if min_dwell < 1:
        raise InvalidParameterError("min_dwell must be at least 1")

    values = np.asarray(windowed, dtype=float)
    single = values.ndim == 1
    values = np.atleast_2d(values)
    bits = np.zeros(values.shape, dtype=np.int8)
    if values.shape[1] == 0:
        return bits[0] if single else bits

    # +1/2 at I1, -1/2 at I0, independent of which level is higher
    position = (values - cfg.midpoint) / (cfg.i1 - cfg.i0)
    above = position > hysteresis_fraction
    below = position < -hysteresis_fraction

    state = (position[:, 0] > 0).astype(np.int8)
    run = np.zeros(values.shape[0], dtype=int)
    for k in range(values.shape[1]):
        leaving = np.where(state == 1, below[:, k], above[:, k])
        run = np.where(leaving, run + 1, 0)
        flip = run >= min_dwell
        state = np.where(flip, 1 - state, state).astype(np.int8)
        bits[:, k] = state
        # a confirmed switch also rewrites the windows that confirmed it
        for back in range(1, min_dwell):
            bits[flip, k - back] = state[flip]
        run[flip] = 0
    return bits[0] if single else bits


def count_switchings(bits: np.ndarray,
                     times: Optional[np.ndarray] = None) -> Tuple[int, np.ndarray]:
    """Number of adjacent unequal bits and the timestamp of each new value."""
    bits = np.asarray(bits)
    if bits.size < 2:
        return 0, np.empty(0)
    changes = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    stamps = np.asarray(times, dtype=float) if times is not None else np.arange(bits.size, dtype=float)
    return int(changes.size), stamps[changes]


def switch_counts(bits: np.ndarray) -> np.ndarray:
    """Switch count of every row of a bit array."""
    return np.count_nonzero(np.diff(np.asarray(bits, dtype=np.int8), axis=-1), axis=-1)


def process_record(record: TrajectoryRecord, cfg: 'DetectorConfig',
                   hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION,
                   min_dwell: int = DEFAULT_MIN_DWELL) -> TrajectoryRecord:
    """Fill the windowed, bit and switch fields of a raw record."""
    times, means = window_average(record.raw, record.dt, cfg.gamma_m, t0=record.t0)
    bits = binarize(means, cfg, hysteresis_fraction, min_dwell)
    _, events = count_switchings(bits, times)
    logger.debug("record of %d samples -> %d windows, %d switches", record.raw.size, means.size, events.size)
    return replace(record, window_times=times, windowed=means, bits=bits, switches=events)


def record_frames(record: TrajectoryRecord) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(raw, windowed) tables in the column order of the CSV exports."""
    raw = pd.DataFrame({'t': record.times, 'I_raw': record.raw})
    if record.dv_true is not None:
        raw['dV_true'] = record.dv_true
    windowed = pd.DataFrame({
        't': record.window_times if record.window_times is not None else np.empty(0),
        'I_bar': record.windowed if record.windowed is not None else np.empty(0),
        'bit': record.bits if record.bits is not None else np.empty(0, dtype=np.int8),
    })
    return raw, windowed


def poisson_goodness_of_fit(counts: np.ndarray, mean: Optional[float] = None) -> Tuple[float, float]:
    """
    Chi-square test of integer counts against Poisson(mean).

    Bins are merged from both tails until each expected count reaches 5. When `mean`
    is omitted the sample mean is used and one extra degree of freedom is removed.

    Returns:
        (chi-square statistic, p-value)
    """
    counts = np.asarray(counts, dtype=int)
    if counts.size == 0:
        raise InvalidParameterError("no counts to test")
    fitted = mean is None
    mu = float(counts.mean()) if fitted else float(mean)

    top = int(max(counts.max(), stats.poisson.ppf(0.9999, mu)))
    probabilities = stats.poisson.pmf(np.arange(top + 1), mu)
    probabilities[-1] += stats.poisson.sf(top, mu)
    observed = np.bincount(counts, minlength=top + 1)[:top + 1].astype(float)
    expected = probabilities * counts.size

    edges = [0]
    acc = 0.0
    for k in range(top + 1):
        acc += expected[k]
        if acc >= POISSON_MIN_EXPECTED and expected[k + 1:].sum() >= POISSON_MIN_EXPECTED:
            edges.append(k + 1)
            acc = 0.0
    edges.append(top + 1)
    edges = sorted(set(edges))
    obs_binned = np.add.reduceat(observed, edges[:-1])
    exp_binned = np.add.reduceat(expected, edges[:-1])

    dof = obs_binned.size - 1 - (1 if fitted else 0)
    if dof < 1:
        raise InvalidParameterError("too few populated bins for a chi-square test")
    statistic = float(np.sum((obs_binned - exp_binned) ** 2 / exp_binned))
    return statistic, float(stats.chi2.sf(statistic, dof))
