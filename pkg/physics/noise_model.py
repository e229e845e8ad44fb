"""
Low-Frequency Noise Synthesis
Frozen 1/f Gaussian noise as a random-phase cosine sum, plus spectrum checks
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal

from config.constants import (
    ALPHA_SQ_UNIT,
    MIN_SPECTRUM_SAMPLES,
    NOISE_EVAL_BLOCK,
    SPECTRUM_MIN_REALIZATIONS,
)
from utils.error_handler import FitFailureError, InvalidParameterError

logger = logging.getLogger(__name__)

TimeLike = Union[float, np.ndarray]


class NoiseSpec(BaseModel):
    """Spectral parameters of the noise: magnitude beta, spacing delta_omega, N components."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    beta: float = Field(gt=0)
    delta_omega: float = Field(gt=0)
    n_components: int = Field(ge=1)

    @property
    def band_width(self) -> float:
        """B_w = N * delta_omega."""
        return self.n_components * self.delta_omega

    @property
    def frequencies(self) -> np.ndarray:
        return self.delta_omega * np.arange(1, self.n_components + 1)


class NoiseSource(Protocol):
    """Anything that returns dV at an array of times."""

    def values(self, t: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class StaticNoise:
    """Constant dV, used for controlled-truth runs."""
    value: float = 0.0

    def values(self, t: TimeLike) -> np.ndarray:
        return np.full(np.shape(t), float(self.value))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """One frozen realisation: alphas ~ N(0, 1), phases ~ U[0, 2 pi)."""
    spec: NoiseSpec
    alphas: np.ndarray
    phases: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.alphas) != self.spec.n_components or len(self.phases) != self.spec.n_components:
            raise InvalidParameterError("alphas and phases must have n_components entries each")

    @property
    def amplitudes(self) -> np.ndarray:
        """sqrt(beta / w_n) * alpha_n."""
        return np.sqrt(self.spec.beta / self.spec.frequencies) * self.alphas

    def values(self, t: TimeLike) -> np.ndarray:
        return eval_noise(self, t)


def sample_noise_model(spec: NoiseSpec, seed: int) -> NoiseModel:
    """Draw a realisation; identical (spec, seed) pairs give identical models."""
    rng = np.random.default_rng(seed)
    alphas = rng.standard_normal(spec.n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_components)
    return NoiseModel(spec=spec, alphas=alphas, phases=phases, seed=seed)


def _cosine_sum(model: NoiseModel, t: np.ndarray, derivative: bool) -> np.ndarray:
    omegas = model.spec.frequencies
    weights = model.amplitudes * (-omegas if derivative else 1.0)
    flat = t.ravel()
    out = np.empty(flat.shape)
    block = max(1, NOISE_EVAL_BLOCK // omegas.size)
    for start in range(0, flat.size, block):
        arg = np.multiply.outer(flat[start:start + block], omegas) + model.phases
        basis = np.sin(arg) if derivative else np.cos(arg)
        out[start:start + block] = basis @ weights
    return out.reshape(t.shape)


def eval_noise(model: NoiseModel, t: TimeLike) -> Union[float, np.ndarray]:
    """
    dV(t) = sum_n sqrt(beta / w_n) alpha_n cos(w_n t + phi_n)

    Args:
        model: frozen noise realisation
        t: time or array of times (t >= 0)

    Returns:
        float for scalar t, array of the same shape otherwise
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise InvalidParameterError("noise is defined for t >= 0")
    result = _cosine_sum(model, arr, derivative=False)
    return float(result) if np.ndim(t) == 0 else result


def eval_noise_derivative(model: NoiseModel, t: TimeLike) -> Union[float, np.ndarray]:
    """Analytic d(dV)/dt."""
    arr = np.asarray(t, dtype=float)
    result = _cosine_sum(model, arr, derivative=True)
    return float(result) if np.ndim(t) == 0 else result


def ensemble_variance(spec: NoiseSpec, alpha_sq: float = ALPHA_SQ_UNIT) -> float:
    """<dV(t)^2> = (beta / 2) * alpha_sq * sum_n 1 / (n delta_omega)."""
    return 0.5 * spec.beta * alpha_sq * float(np.sum(1.0 / spec.frequencies))


def beta_for_rms(target_rms: float, delta_omega: float, n_components: int,
                 alpha_sq: float = ALPHA_SQ_UNIT) -> float:
    """Spectral magnitude giving the requested ensemble RMS of dV."""
    if target_rms <= 0:
        raise InvalidParameterError("target_rms must be positive")
    harmonic = float(np.sum(1.0 / np.arange(1, n_components + 1)))
    return 2.0 * target_rms ** 2 * delta_omega / (alpha_sq * harmonic)


def estimate_spectrum(samples: np.ndarray, sample_dt: float,
                      band_width: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Averaged one-sided periodogram of one or many noise realisations.

    Args:
        samples: 1-D series or (realizations, samples) array
        sample_dt: sampling interval
        band_width: highest angular frequency in the series; sampling must resolve it,
            sample_dt * band_width < pi

    Returns:
        (angular frequencies, power) with the zero-frequency bin dropped
    """
    data = np.atleast_2d(np.asarray(samples, dtype=float))
    if data.shape[-1] < MIN_SPECTRUM_SAMPLES:
        raise InvalidParameterError(
            f"spectrum needs at least {MIN_SPECTRUM_SAMPLES} samples, got {data.shape[-1]}")
    if sample_dt <= 0:
        raise InvalidParameterError("sample_dt must be positive")
    if band_width is not None and not sample_dt * band_width < math.pi:
        raise InvalidParameterError(
            f"sample_dt * B_w = {sample_dt * band_width:.4g} aliases the band",
            invariant="sample_dt * B_w < pi")
    if data.shape[0] < SPECTRUM_MIN_REALIZATIONS:
        logger.warning("periodogram of %d realisation(s); slopes need about %d to settle",
                       data.shape[0], SPECTRUM_MIN_REALIZATIONS)

    freqs, power = signal.periodogram(data, fs=1.0 / sample_dt, window='boxcar',
                                      detrend=False, scaling='density', axis=-1)
    mean_power = power.mean(axis=0)
    logger.debug("periodogram over %d realisation(s), %d bins", data.shape[0], freqs.size)
    return 2.0 * np.pi * freqs[1:], mean_power[1:]


def spectral_slope(freqs: np.ndarray, power: np.ndarray,
                   band: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of log(power) against log(frequency) inside `band`."""
    mask = (freqs > 0) & (power > 0)
    if band is not None:
        mask &= (freqs >= band[0]) & (freqs <= band[1])
    if np.count_nonzero(mask) < 2:
        raise FitFailureError("no positive spectral power to fit",
                              diagnostics={'bins': int(freqs.size), 'usable': int(np.count_nonzero(mask))})
    slope, _ = np.polyfit(np.log10(freqs[mask]), np.log10(power[mask]), 1)
    return float(slope)


def sample_series(model: NoiseModel, n_samples: int, sample_dt: float, t0: float = 0.0) -> np.ndarray:
    """dV on an evenly spaced grid, convenience for spectrum checks."""
    return eval_noise(model, t0 + sample_dt * np.arange(n_samples))


def rms_at_origin(spec: NoiseSpec) -> float:
    return math.sqrt(ensemble_variance(spec))
