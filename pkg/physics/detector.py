"""
Continuous Weak Measurement
Detector record model, selective Bayesian update and the vectorised trajectory engine
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config.constants import (
    CHUNK_STEPS,
    DEFAULT_STEPPING_METHOD,
    EXPONENT_CLIP,
    WEAK_MEASUREMENT_DT_LIMIT,
    WEAK_REGIME_RATIO,
)
from physics.noise_model import NoiseSource
from physics.qubit_core import (
    DensityMatrix,
    QubitHamiltonian,
    apply_rotation,
    check_physical,
    check_step,
    evolve_unitary,
    rotation_coefficients,
)
from protocol.record_pipeline import TrajectoryRecord, block_means
from utils.error_handler import InvalidParameterError, NumericalRangeError

logger = logging.getLogger(__name__)

NoiseArg = Union[NoiseSource, Sequence[NoiseSource]]


class DetectorConfig(BaseModel):
    """Detector currents I0/I1, white-noise density S_I and sampling interval dt."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    i0: float
    i1: float
    s_i: float = Field(gt=0)
    dt: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_invariants(self) -> 'DetectorConfig':
        if self.delta_i <= 0:
            raise ValueError("I0 and I1 must differ (delta_I > 0)")
        if self.dt * self.gamma_m > WEAK_MEASUREMENT_DT_LIMIT:
            raise ValueError(
                f"dt*gamma_m = {self.dt * self.gamma_m:.4g} exceeds {WEAK_MEASUREMENT_DT_LIMIT} (dt << 1/gamma_m)")
        if self.delta_i > WEAK_REGIME_RATIO * abs(self.midpoint):
            logger.warning("delta_I=%.3g is not << mean current %.3g; weak-measurement picture is marginal",
                           self.delta_i, self.midpoint)
        return self

    @property
    def delta_i(self) -> float:
        return abs(self.i0 - self.i1)

    @property
    def gamma_m(self) -> float:
        """Measurement rate dI^2 / (4 S_I)."""
        return self.delta_i ** 2 / (4.0 * self.s_i)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.i0 + self.i1)

    @property
    def noise_std(self) -> float:
        """Per-sample detector noise sqrt(S_I / (2 dt))."""
        return math.sqrt(self.s_i / (2.0 * self.dt))


@dataclass
class TrajectoryState:
    """Selective state of one trajectory with its own random stream."""
    rho: DensityMatrix
    t: float
    rng: np.random.Generator


def trajectory_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for trajectory `index` of master seed `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_current(rho: DensityMatrix, cfg: DetectorConfig,
                   rng: Optional[np.random.Generator] = None, noise: bool = True) -> float:
    """I = I0 rho00 + I1 rho11 + xi with xi ~ N(0, S_I / (2 dt))."""
    mean = cfg.i0 * rho.rho00 + cfg.i1 * rho.rho11
    if not noise:
        return mean
    if rng is None:
        raise InvalidParameterError("a random generator is required when detector noise is on")
    return mean + cfg.noise_std * rng.standard_normal()


def likelihood_weights(i_obs: float, cfg: DetectorConfig) -> Tuple[float, float]:
    """Unnormalised likelihoods exp(-(I - I0)^2 dt / S_I) and exp(-(I - I1)^2 dt / S_I)."""
    w0 = math.exp(-(i_obs - cfg.i0) ** 2 * cfg.dt / cfg.s_i)
    w1 = math.exp(-(i_obs - cfg.i1) ** 2 * cfg.dt / cfg.s_i)
    return w0, w1


def _log_likelihood_ratio(current, cfg: DetectorConfig):
    """log(w0 / w1) = 2 (I0 - I1)(I - midpoint) dt / S_I, clipped to a finite range."""
    ratio = 2.0 * (cfg.i0 - cfg.i1) * (current - cfg.midpoint) * cfg.dt / cfg.s_i
    return np.clip(ratio, -EXPONENT_CLIP, EXPONENT_CLIP)


def _bayes_arrays(p, q, current, cfg: DetectorConfig):
    # with e = w1/w0: p' = p / D, q' = q sqrt(e) / D, D = p + (1 - p) e
    half = np.exp(-0.5 * _log_likelihood_ratio(current, cfg))
    e = half * half
    denominator = p + (1.0 - p) * e
    return p / denominator, q * (half / denominator)


def bayesian_update(rho: DensityMatrix, i_obs: float, cfg: DetectorConfig) -> DensityMatrix:
    """
    Selective update of rho after observing current i_obs over one dt.

    Populations are reweighted by the two Gaussian likelihoods and renormalised; the
    coherence is scaled by sqrt(rho00' rho11' / (rho00 rho11)). rho00 in {0, 1} is a fixed point.
    """
    if rho.rho00 in (0.0, 1.0):
        return rho
    if not math.isfinite(i_obs):
        raise NumericalRangeError(f"observed current {i_obs} is not finite")
    p, q = _bayes_arrays(rho.rho00, rho.rho01, i_obs, cfg)
    if not (np.isfinite(p) and np.isfinite(q)):
        raise NumericalRangeError("Bayesian update produced a non-finite state")
    return DensityMatrix(float(p), complex(q))


def step_trajectory(state: TrajectoryState, h: QubitHamiltonian, cfg: DetectorConfig,
                    method: str = DEFAULT_STEPPING_METHOD) -> Tuple[TrajectoryState, float]:
    """One dt: sample the current, apply the Bayesian update, then the Hamiltonian step."""
    current = sample_current(state.rho, cfg, state.rng)
    rho = bayesian_update(state.rho, current, cfg)
    rho = evolve_unitary(rho, h, cfg.dt, method)
    return TrajectoryState(rho=rho, t=state.t + cfg.dt, rng=state.rng), current


@dataclass
class BatchSegment:
    """Output of one TrajectoryBatch.advance call; per-trajectory arrays have leading axis M."""
    t_start: np.ndarray
    n_steps: int
    dt: float
    raw: Optional[np.ndarray] = None
    dv_true: Optional[np.ndarray] = None
    windowed: Optional[np.ndarray] = None
    window_size: int = 0
    log_times: Optional[np.ndarray] = None
    log_rho00: Optional[np.ndarray] = None
    log_rho01: Optional[np.ndarray] = None
    dv_end: Optional[np.ndarray] = None

    def window_times(self, index: int) -> np.ndarray:
        if self.windowed is None:
            return np.empty(0)
        return self.t_start[index] + self.window_size * self.dt * np.arange(self.windowed.shape[1])


class TrajectoryBatch:
    """
    M independent selective trajectories advanced in lock-step.

    Each trajectory owns its generator, noise source, control shift and clock, so
    trajectory m of a batch equals a single run seeded with the same stream.
    """

    def __init__(self, cfg: DetectorConfig, ez: float, rngs: Sequence[np.random.Generator],
                 rho0: Union[DensityMatrix, Sequence[DensityMatrix]] = None,
                 t0: Union[float, np.ndarray] = 0.0, method: str = DEFAULT_STEPPING_METHOD):
        self.cfg = cfg
        self.ez = float(ez)
        self.method = method
        self.rngs: List[np.random.Generator] = list(rngs)
        size = len(self.rngs)
        if size == 0:
            raise InvalidParameterError("a batch needs at least one trajectory")

        if rho0 is None:
            rho0 = DensityMatrix.ground()
        states = [rho0] * size if isinstance(rho0, DensityMatrix) else list(rho0)
        if len(states) != size:
            raise InvalidParameterError("one initial state per trajectory is required")
        self.p = np.array([s.rho00 for s in states], dtype=float)
        self.q = np.array([s.rho01 for s in states], dtype=complex)
        self.t = np.broadcast_to(np.asarray(t0, dtype=float), (size,)).copy()

    @classmethod
    def from_seed(cls, cfg: DetectorConfig, ez: float, seed: int, size: int,
                  rho0: DensityMatrix = None, t0: Union[float, np.ndarray] = 0.0,
                  method: str = DEFAULT_STEPPING_METHOD, first_index: int = 0) -> 'TrajectoryBatch':
        rngs = [trajectory_rng(seed, first_index + m) for m in range(size)]
        return cls(cfg, ez, rngs, rho0=rho0, t0=t0, method=method)

    @property
    def size(self) -> int:
        return len(self.rngs)

    def states(self) -> List[DensityMatrix]:
        return [DensityMatrix(min(max(p, 0.0), 1.0), q) for p, q in zip(self.p, self.q)]

    def noise_now(self, noise: NoiseArg) -> np.ndarray:
        """dV of each trajectory at its current clock."""
        return self._noise_matrix(noise, self.t[None, :])[0]

    def _noise_matrix(self, noise: NoiseArg, times: np.ndarray) -> np.ndarray:
        """dV for a (steps, M) block of times."""
        if hasattr(noise, 'values'):
            if np.all(self.t == self.t[0]):
                return np.broadcast_to(noise.values(times[:, 0])[:, None], times.shape)
            return noise.values(times)
        sources = list(noise)
        if len(sources) != self.size:
            raise InvalidParameterError("one noise source per trajectory is required")
        return np.stack([src.values(times[:, m]) for m, src in enumerate(sources)], axis=1)

    def advance(self, duration: float, noise: NoiseArg, shift: Union[float, np.ndarray] = 0.0,
                keep_raw: bool = False, samples_per_window: int = 0,
                log_every: int = 0) -> BatchSegment:
        """
        Advance every trajectory by `duration`.

        Args:
            duration: length of the segment (rounded to whole dt steps, may be 0)
            noise: one shared source or one per trajectory
            shift: control shift added to the off-diagonal element, scalar or per trajectory
            keep_raw: keep every current sample and the true dV
            samples_per_window: if set, accumulate non-overlapping window means
            log_every: if set, log (rho00, rho01) every this many steps

        Returns:
            BatchSegment for the advanced interval
        """
        if duration < 0:
            raise InvalidParameterError(f"duration must be non-negative, got {duration}")
        cfg = self.cfg
        dt = cfg.dt
        size = self.size
        n_steps = int(round(duration / dt))
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (size,))

        segment = BatchSegment(t_start=self.t.copy(), n_steps=n_steps, dt=dt, window_size=samples_per_window)
        if keep_raw:
            segment.raw = np.empty((size, n_steps))
            segment.dv_true = np.empty((size, n_steps))
        window_chunks = []
        log_steps = np.arange(0, n_steps + 1, log_every) if log_every else np.empty(0, dtype=int)
        log_p = np.empty((size, log_steps.size))
        log_q = np.empty((size, log_steps.size), dtype=complex)
        log_cursor = 0

        chunk = CHUNK_STEPS
        if samples_per_window:
            chunk = samples_per_window * max(1, CHUNK_STEPS // samples_per_window)

        p, q = self.p, self.q
        euler = self.method == 'euler'
        offsets = np.arange(chunk, dtype=float)
        for start in range(0, n_steps, chunk):
            k = min(chunk, n_steps - start)
            times = self.t[None, :] + (start + offsets[:k, None]) * dt
            dv = self._noise_matrix(noise, times)
            off_diag = dv + shift[None, :]
            check_step(self.ez, off_diag, dt)
            a2, b2, ba = rotation_coefficients(self.ez, off_diag, dt, self.method)
            kicks = np.stack([rng.standard_normal(k) for rng in self.rngs], axis=1) * cfg.noise_std
            currents = np.empty((k, size))

            for j in range(k):
                if log_cursor < log_steps.size and log_steps[log_cursor] == start + j:
                    log_p[:, log_cursor], log_q[:, log_cursor] = p, q
                    log_cursor += 1
                current = cfg.i1 + (cfg.i0 - cfg.i1) * p + kicks[j]
                currents[j] = current
                p, q = _bayes_arrays(p, q, current, cfg)
                p, q = apply_rotation(p, q, (a2[j], b2[j], ba[j]))
                # first-order steps inflate the Bloch vector every step
                if euler:
                    check_physical(p, q, step=start + j + 1)

            if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
                raise NumericalRangeError(f"non-finite state after step {start + k}")
            check_physical(p, q, step=start + k)
            if keep_raw:
                segment.raw[:, start:start + k] = currents.T
                segment.dv_true[:, start:start + k] = np.asarray(dv).T
            if samples_per_window:
                window_chunks.append(block_means(currents, samples_per_window).T)

        if log_cursor < log_steps.size and log_steps[log_cursor] == n_steps:
            log_p[:, log_cursor], log_q[:, log_cursor] = p, q
            log_cursor += 1

        self.p, self.q = p, q
        self.t = self.t + n_steps * dt

        if samples_per_window:
            segment.windowed = (np.concatenate(window_chunks, axis=1) if window_chunks
                                else np.empty((size, 0)))
        if log_every:
            segment.log_times = log_steps * dt
            segment.log_rho00, segment.log_rho01 = log_p, log_q
        segment.dv_end = self.noise_now(noise)
        logger.debug("advanced %d trajectories by %d steps", size, n_steps)
        return segment


def run_trajectory(rho0: DensityMatrix, ez: float, noise: NoiseSource, cfg: DetectorConfig,
                   duration: float, seed: int, shift: float = 0.0,
                   method: str = DEFAULT_STEPPING_METHOD, log_every: int = 0,
                   t0: float = 0.0, index: int = 0) -> TrajectoryRecord:
    """
    Simulate one selective trajectory and return its full raw record.

    The Hamiltonian is rebuilt every step with off_diag = dV(t) + shift.
    """
    batch = TrajectoryBatch.from_seed(cfg, ez, seed, 1, rho0=rho0, t0=t0, method=method, first_index=index)
    segment = batch.advance(duration, noise, shift=shift, keep_raw=True, log_every=log_every)

    state_log = None
    if log_every:
        rho01 = segment.log_rho01[0]
        state_log = pd.DataFrame({
            't': t0 + segment.log_times,
            'rho00': segment.log_rho00[0],
            're_rho01': rho01.real,
            'im_rho01': rho01.imag,
        })
    return TrajectoryRecord(dt=cfg.dt, raw=segment.raw[0], t0=t0,
                            dv_true=segment.dv_true[0], state_log=state_log)
