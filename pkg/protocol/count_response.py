"""
Detector Count Response
Observed-versus-true switch counts of the window and Schmitt-trigger stages
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from config.constants import (
    COUNT_RESPONSE_CHUNK,
    COUNT_RESPONSE_GRID,
    COUNT_RESPONSE_MAX_ROWS,
    COUNT_RESPONSE_RATES,
    COUNT_RESPONSE_SEED,
    COUNT_RESPONSE_SWITCHES,
    COUNT_RESPONSE_WINDOWS,
)
from protocol.record_pipeline import binarize, samples_per_window, switch_counts
from utils.error_handler import InvalidParameterError

if TYPE_CHECKING:
    from physics.detector import DetectorConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_INVERSION_GRID = 4001


def telegraph_windows(cfg: 'DetectorConfig', rate_per_window: float, n_windows: int, rows: int,
                      rng: np.random.Generator) -> np.ndarray:
    """
    Window means of a symmetric random telegraph seen through the detector.

    Each row starts at I0 and flips between the two levels as a Poisson process with
    `rate_per_window` flips per window. A window mean is I0 + (I1 - I0) f, with f the
    exact fraction of the window spent at I1, plus the Gaussian noise of a window average.

    Returns:
        array of shape (rows, n_windows)
    """
    if rate_per_window < 0 or n_windows < 1 or rows < 1:
        raise InvalidParameterError("telegraph needs rate >= 0, n_windows >= 1 and rows >= 1")
    window_sigma = cfg.noise_std / math.sqrt(samples_per_window(cfg.dt, cfg.gamma_m))
    span = float(n_windows)
    edges = np.arange(n_windows + 1, dtype=float)

    occupancy = np.zeros((rows, n_windows))
    flips = rng.poisson(rate_per_window * span, size=rows)
    for r in np.flatnonzero(flips):
        knots = np.concatenate(([0.0], np.sort(rng.uniform(0.0, span, flips[r])), [span]))
        level = np.arange(knots.size - 1) % 2
        time_at_i1 = np.concatenate(([0.0], np.cumsum(level * np.diff(knots))))
        occupancy[r] = np.diff(np.interp(edges, knots, time_at_i1))

    means = cfg.i0 + (cfg.i1 - cfg.i0) * occupancy
    return means + rng.normal(0.0, window_sigma, size=means.shape)


def observed_switch_counts(cfg: 'DetectorConfig', rate_per_window: float, n_windows: int, rows: int,
                           hysteresis_fraction: float, min_dwell: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Switch counts the trigger reports for `rows` telegraph records, built in chunks."""
    counts = []
    for start in range(0, rows, COUNT_RESPONSE_CHUNK):
        chunk = min(COUNT_RESPONSE_CHUNK, rows - start)
        windowed = telegraph_windows(cfg, rate_per_window, n_windows, chunk, rng)
        counts.append(switch_counts(binarize(windowed, cfg, hysteresis_fraction, min_dwell)))
    return np.concatenate(counts)


@dataclass(frozen=True, eq=False)
class CountResponse:
    """
    Mean and spread of the observed switch count as functions of the true one.

    observed = true * efficiency(r) + false_rate * n_windows, with r the true switches
    per window. Dwells shorter than about two windows are lost, so the efficiency
    falls with r; noise excursions confirmed as switches give the false rate. A lost
    dwell drops two switches at once, which leaves the observed count over-dispersed
    by the Fano factor var / mean.
    """
    rates: np.ndarray
    log_efficiency: np.ndarray
    false_rate: float
    log_fano: Optional[np.ndarray] = None

    @staticmethod
    def _anchored(rates: np.ndarray, values: np.ndarray) -> PchipInterpolator:
        return PchipInterpolator(np.concatenate(([0.0], rates)), np.concatenate(([0.0], values)),
                                 extrapolate=True)

    @property
    def _curve(self) -> PchipInterpolator:
        return self._anchored(self.rates, self.log_efficiency)

    def efficiency(self, true_count: ArrayLike, n_windows: int) -> ArrayLike:
        """Fraction of true switches that survive the trigger."""
        rate = np.asarray(true_count, dtype=float) / n_windows
        value = np.exp(self._curve(rate))
        return float(value) if np.ndim(true_count) == 0 else value

    def expected_count(self, true_count: ArrayLike, n_windows: int) -> ArrayLike:
        """Mean observed count over n_windows windows for a mean true count."""
        true = np.asarray(true_count, dtype=float)
        value = true * self.efficiency(true, n_windows) + self.false_rate * n_windows
        return float(value) if np.ndim(true_count) == 0 else value

    def fano(self, true_count: ArrayLike, n_windows: int) -> ArrayLike:
        """Variance over mean of the observed count; 1 when no Fano data was measured."""
        rate = np.asarray(true_count, dtype=float) / n_windows
        if self.log_fano is None:
            value = np.ones_like(rate)
        else:
            value = np.exp(self._anchored(self.rates, self.log_fano)(rate))
        return float(value) if np.ndim(true_count) == 0 else value

    def variance_factor(self, true_count: ArrayLike, n_windows: int) -> ArrayLike:
        """
        Variance of the corrected count over that of a Poisson count with the same mean.

        The observed variance fano * observed mean is carried back through the slope of
        expected_count. Zero counts give 1.
        """
        true = np.atleast_1d(np.asarray(true_count, dtype=float))
        factor = np.ones_like(true)
        positive = true > 0
        if np.any(positive):
            mu = true[positive]
            step = 1e-3 * mu
            rise = self.expected_count(mu + step, n_windows) - self.expected_count(mu - step, n_windows)
            slope = rise / (2.0 * step)
            observed = self.expected_count(mu, n_windows)
            factor[positive] = self.fano(mu, n_windows) * observed / (slope ** 2 * mu)
        return float(factor[0]) if np.ndim(true_count) == 0 else factor

    def true_count(self, observed: ArrayLike, n_windows: int) -> ArrayLike:
        """
        Invert expected_count for the true count.

        Counts at or below the false-switch level map to zero; counts beyond the
        largest the trigger can report map to the rate where it saturates.
        """
        observed_arr = np.asarray(observed, dtype=float)
        if np.any(observed_arr < 0):
            raise InvalidParameterError("switch counts cannot be negative")
        rates = np.linspace(0.0, 2.0 * self.rates[-1], _INVERSION_GRID)
        per_window = rates * np.exp(self._curve(rates)) + self.false_rate
        # keep the increasing branch
        rising = np.flatnonzero(np.diff(per_window) <= 0)
        stop = int(rising[0]) + 1 if rising.size else rates.size
        rates, per_window = rates[:stop], per_window[:stop]

        target = observed_arr / n_windows
        if np.any(target > per_window[-1]):
            logger.warning("observed count above the trigger's saturation (%.3g per window); clipping",
                           per_window[-1])
        value = n_windows * np.interp(target, per_window, rates)
        return float(value) if np.ndim(observed) == 0 else value


@lru_cache(maxsize=16)
def measure_count_response(cfg: 'DetectorConfig', hysteresis_fraction: float, min_dwell: int,
                           seed: int = COUNT_RESPONSE_SEED) -> CountResponse:
    """
    Calibrate the trigger against telegraph records of known switching rate.

    The records share the detector's window noise and run through the same binarize
    call as the trajectories, on a geometric grid of true rates. Results are cached
    per detector and trigger setting.
    """
    rng = np.random.default_rng(seed)
    n_windows = COUNT_RESPONSE_WINDOWS

    quiet = observed_switch_counts(cfg, 0.0, n_windows, COUNT_RESPONSE_MAX_ROWS,
                                   hysteresis_fraction, min_dwell, rng)
    false_rate = float(quiet.mean()) / n_windows

    rates = np.geomspace(*COUNT_RESPONSE_RATES, COUNT_RESPONSE_GRID)
    log_efficiency = np.empty(rates.size)
    log_fano = np.empty(rates.size)
    for j, rate in enumerate(rates):
        rows = int(min(COUNT_RESPONSE_MAX_ROWS, math.ceil(COUNT_RESPONSE_SWITCHES / (rate * n_windows))))
        counts = observed_switch_counts(cfg, float(rate), n_windows, rows, hysteresis_fraction, min_dwell, rng)
        efficiency = (counts.mean() / n_windows - false_rate) / rate
        if efficiency <= 0:
            raise InvalidParameterError(
                f"trigger (h={hysteresis_fraction}, min_dwell={min_dwell}) reports no switches at "
                f"{rate:.3g} per window; the detector cannot resolve the qubit")
        log_efficiency[j] = math.log(efficiency)
        log_fano[j] = math.log(counts.var(ddof=1) / counts.mean())

    response = CountResponse(rates=rates, log_efficiency=log_efficiency, false_rate=false_rate,
                             log_fano=log_fano)
    logger.info("count response h=%.3g min_dwell=%d: efficiency %.3f to %.3f, Fano %.3f to %.3f, "
                "false %.2e/window", hysteresis_fraction, min_dwell, math.exp(log_efficiency[0]),
                math.exp(log_efficiency[-1]), math.exp(log_fano[0]), math.exp(log_fano[-1]), false_rate)
    return response
