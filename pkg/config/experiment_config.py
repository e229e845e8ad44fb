"""
Experiment configuration: one validated document per run, loaded from JSON or a preset.
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.constants import (
    DEFAULT_BANDWIDTHS,
    DEFAULT_CHECKPOINTS,
    DEFAULT_DT,
    DEFAULT_EZ,
    DEFAULT_GATE,
    DEFAULT_GATE_DV_VALUES,
    DEFAULT_HYSTERESIS_FRACTION,
    DEFAULT_I0,
    DEFAULT_I1,
    DEFAULT_MASTER_DT,
    DEFAULT_MIN_DWELL,
    DEFAULT_N_COMPONENTS,
    DEFAULT_N_P,
    DEFAULT_NOISE_RMS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_S_I,
    DEFAULT_STEPPING_METHOD,
    ENV_OUTPUT_DIR,
    MIN_FIDELITY_REALIZATIONS,
    MIN_SWEEP_REPETITIONS,
    RUN_PRESETS,
)
from physics.detector import DetectorConfig
from physics.noise_model import NoiseSource, NoiseSpec, StaticNoise, beta_for_rms, sample_noise_model
from utils.error_handler import ConfigurationError

logger = logging.getLogger(__name__)

load_dotenv()

_FROZEN = ConfigDict(extra="forbid", frozen=True)


def _default_noise_spec() -> NoiseSpec:
    delta_omega = DEFAULT_BANDWIDTHS[0] / DEFAULT_N_COMPONENTS
    return NoiseSpec(beta=beta_for_rms(DEFAULT_NOISE_RMS, delta_omega, DEFAULT_N_COMPONENTS),
                     delta_omega=delta_omega, n_components=DEFAULT_N_COMPONENTS)


class NoiseSettings(BaseModel):
    """Noise section: the 1/f spectrum and its realisation seed, or a constant dV."""
    model_config = _FROZEN

    beta: float = Field(default_factory=lambda: _default_noise_spec().beta, gt=0)
    delta_omega: float = Field(default_factory=lambda: _default_noise_spec().delta_omega, gt=0)
    n_components: int = Field(default=DEFAULT_N_COMPONENTS, ge=1)
    noise_seed: int = 0
    static_dv: Optional[float] = None

    @property
    def spec(self) -> NoiseSpec:
        return NoiseSpec(beta=self.beta, delta_omega=self.delta_omega, n_components=self.n_components)

    def source(self) -> NoiseSource:
        """Constant noise when static_dv is set, otherwise the seeded realisation."""
        if self.static_dv is not None:
            return StaticNoise(self.static_dv)
        return sample_noise_model(self.spec, self.noise_seed)


class ProtocolSettings(BaseModel):
    model_config = _FROZEN

    n_p: int = Field(default=DEFAULT_N_P, ge=1)
    hysteresis_fraction: float = Field(default=DEFAULT_HYSTERESIS_FRACTION, ge=0, lt=0.5)
    min_dwell: int = Field(default=DEFAULT_MIN_DWELL, ge=1)
    count_correction: bool = True


class RunSettings(BaseModel):
    model_config = _FROZEN

    seed: int = 0
    repetitions: int = Field(default=MIN_SWEEP_REPETITIONS, ge=1)
    output_dir: str = Field(default_factory=lambda: os.getenv(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR))
    method: Literal['exact', 'euler'] = DEFAULT_STEPPING_METHOD
    log_every: int = Field(default=0, ge=0)


class EnsembleSettings(BaseModel):
    """Fixed-dV master-equation run and the measurement-rate scan."""
    model_config = _FROZEN

    dv: float = 0.82
    duration: Optional[float] = Field(default=None, ge=0)
    dt: float = Field(default=DEFAULT_MASTER_DT, gt=0)
    checkpoints: int = Field(default=DEFAULT_CHECKPOINTS, ge=1)
    method: Literal['rk4', 'expm'] = 'rk4'
    gamma_values: List[float] = Field(default_factory=lambda: [0.1, 1.0, 3.0, 7.0, 14.0, 28.0, 56.0, 140.0])


class SweepSettings(BaseModel):
    model_config = _FROZEN

    bandwidths: List[float] = Field(default_factory=lambda: list(DEFAULT_BANDWIDTHS), min_length=1)
    target_rms: float = Field(default=DEFAULT_NOISE_RMS, gt=0)
    n_components: int = Field(default=DEFAULT_N_COMPONENTS, ge=1)
    mode: Literal['trajectory', 'counts'] = 'trajectory'

    @field_validator('bandwidths')
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(bw <= 0 for bw in value):
            raise ValueError("band widths must be positive")
        return value


class GateSettings(BaseModel):
    model_config = _FROZEN

    gate: Literal['hadamard', 'phase', 'bitflip'] = DEFAULT_GATE
    dv_values: List[float] = Field(default_factory=lambda: list(DEFAULT_GATE_DV_VALUES), min_length=1)
    realizations: int = Field(default=MIN_FIDELITY_REALIZATIONS, ge=MIN_FIDELITY_REALIZATIONS)
    residue_mode: Literal['trajectory', 'counts'] = 'trajectory'


class ExperimentConfig(BaseModel):
    """
    Complete, validated description of an experiment.

    Every module-level invariant is checked on construction: the detector section
    re-validates the weak-measurement limits and the noise section the spectral ones.
    Unknown keys anywhere are errors.
    """
    model_config = _FROZEN

    ez: float = Field(default=DEFAULT_EZ, gt=0)
    detector: DetectorConfig = Field(default_factory=lambda: DetectorConfig(
        i0=DEFAULT_I0, i1=DEFAULT_I1, s_i=DEFAULT_S_I, dt=DEFAULT_DT))
    noise: NoiseSettings = Field(default_factory=NoiseSettings)
    protocol: ProtocolSettings = Field(default_factory=ProtocolSettings)
    run: RunSettings = Field(default_factory=RunSettings)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    gates: GateSettings = Field(default_factory=GateSettings)

    @property
    def gamma_m(self) -> float:
        return self.detector.gamma_m

    @property
    def phase_duration(self) -> float:
        return 2.0 * self.protocol.n_p / self.detector.gamma_m

    def with_overrides(self, **sections) -> 'ExperimentConfig':
        """Copy with nested section overrides, re-validated."""
        data = self.model_dump()
        _deep_update(data, sections)
        return ExperimentConfig.model_validate(data)


def _deep_update(target: dict, updates: dict) -> dict:
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            _deep_update(target[key], value)
        else:
            target[key] = copy.deepcopy(value)
    return target


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a JSON experiment file.

    Raises:
        ConfigurationError: missing file or malformed JSON
        pydantic.ValidationError: schema or invariant violations
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    config = ExperimentConfig.model_validate_json(text)
    logger.info("loaded %s (gamma_m=%.4g, phase duration %.4g)", path, config.gamma_m, config.phase_duration)
    return config


def get_preset(name: str) -> ExperimentConfig:
    """Return a registered preset ('baseline', 'quick')."""
    if name not in RUN_PRESETS:
        raise ConfigurationError(f"unknown preset '{name}', choose from {sorted(RUN_PRESETS)}")
    return ExperimentConfig().with_overrides(**RUN_PRESETS[name]['overrides'])


def list_presets() -> dict:
    return {name: preset['description'] for name, preset in RUN_PRESETS.items()}
