"""
Single-Qubit Gates Under Quasi-Static Noise
Drive constructions, fidelity under raw and calibrated noise, and infidelity scaling
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from config.constants import (
    DEFAULT_HYSTERESIS_FRACTION,
    DEFAULT_MIN_DWELL,
    DEFAULT_N_P,
    DEFAULT_STEPPING_METHOD,
    MIN_FIDELITY_REALIZATIONS,
    SUPPORTED_GATES,
    UNITARY_TOLERANCE,
)
from config.worker_pool import derive_seed, run_parallel
from physics.detector import DetectorConfig
from physics.noise_model import StaticNoise
from physics.qubit_core import SIGMA_X, SIGMA_Z, make_hamiltonian
from protocol.calibration import run_calibration_batch, run_calibration_counts
from utils.error_handler import InvalidParameterError

logger = logging.getLogger(__name__)

Drive = Tuple[Tuple[float, float], ...]

KET_0 = np.array([1.0, 0.0], dtype=complex)
KET_1 = np.array([0.0, 1.0], dtype=complex)


@dataclass(frozen=True, eq=False)
class GateSpec:
    """Target unitary and the piecewise-constant off-diagonal drive that realises it."""
    name: str
    ez: float
    drive: Drive
    target_unitary: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.target_unitary, dtype=complex)
        if u.shape != (2, 2) or not np.allclose(u.conj().T @ u, np.eye(2), atol=UNITARY_TOLERANCE):
            raise InvalidParameterError(f"target of gate '{self.name}' is not unitary")
        if any(duration <= 0 for _, duration in self.drive):
            raise InvalidParameterError(f"gate '{self.name}' has a non-positive segment duration")

    @property
    def duration(self) -> float:
        return float(sum(duration for _, duration in self.drive))


def drive_unitary(drive: Drive, ez: float, dv: float = 0.0) -> np.ndarray:
    """Time-ordered product of exp(-i H t) over the drive segments, with dV added to each coupling."""
    unitary = np.eye(2, dtype=complex)
    for coupling, duration in drive:
        h = make_hamiltonian(ez, dv, shift=coupling).matrix()
        unitary = expm(-1j * h * duration) @ unitary
    return unitary


def build_gate(name: str, ez: float) -> GateSpec:
    """
    Build one of the supported gates for splitting E_z.

    hadamard: coupling E_z for pi / (2 sqrt(2) E_z), giving -i (sx - sz) / sqrt(2)
    phase:    zero coupling for pi / (2 E_z), giving i sz
    bitflip:  hadamard, phase, hadamard, giving i sx
    """
    if not ez > 0:
        raise InvalidParameterError(f"gates need E_z > 0, got {ez}", invariant="ez > 0")
    hadamard = ((float(ez), math.pi / (2.0 * math.sqrt(2.0) * ez)),)
    phase = ((0.0, math.pi / (2.0 * ez)),)

    if name == 'hadamard':
        return GateSpec(name, ez, hadamard, -1j * (SIGMA_X - SIGMA_Z) / math.sqrt(2.0))
    if name == 'phase':
        return GateSpec(name, ez, phase, 1j * SIGMA_Z)
    if name == 'bitflip':
        return GateSpec(name, ez, hadamard + phase + hadamard, 1j * SIGMA_X)
    raise InvalidParameterError(f"unknown gate '{name}', choose from {SUPPORTED_GATES}")


def apply_gate_with_noise(gate: GateSpec, dv_effective: float,
                          psi_i: np.ndarray = KET_0) -> np.ndarray:
    """Evolve a pure state through the gate drive with quasi-static dV added to every segment."""
    psi = np.asarray(psi_i, dtype=complex)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise InvalidParameterError(f"input state must be normalised, |psi| = {norm}")
    return drive_unitary(gate.drive, gate.ez, dv_effective) @ psi


def fidelity(psi_t: np.ndarray, psi_out: np.ndarray) -> float:
    """|<psi_t|psi_out>|^2"""
    return float(min(abs(np.vdot(psi_t, psi_out)) ** 2, 1.0))


def gate_fidelity(gate: GateSpec, dv_effective: float, psi_i: np.ndarray = KET_0) -> float:
    psi_t = gate.target_unitary @ np.asarray(psi_i, dtype=complex)
    return fidelity(psi_t, apply_gate_with_noise(gate, dv_effective, psi_i))


class ResidueSource(Protocol):
    """Produces calibration residues dV - dV_c at a quasi-static noise value."""

    def residues(self, dv: float, count: int, seed: int) -> np.ndarray:
        ...


@dataclass(frozen=True)
class PoissonCountResidues:
    """Residues from the count-level protocol (Poisson switch counts, no trajectories)."""
    ez: float
    gamma_m: float
    n_p: int = DEFAULT_N_P
    count_correction: bool = True

    def residues(self, dv: float, count: int, seed: int) -> np.ndarray:
        noise = StaticNoise(dv)
        results = [run_calibration_counts(self.ez, self.gamma_m, noise, self.n_p,
                                          rng=np.random.default_rng(derive_seed(seed, r)),
                                          count_correction=self.count_correction)
                   for r in range(count)]
        return np.array([dv - r.dv_c for r in results])


@dataclass(frozen=True)
class TrajectoryResidues:
    """Residues from full selective-trajectory calibrations."""
    ez: float
    cfg: DetectorConfig
    n_p: int = DEFAULT_N_P
    hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION
    min_dwell: int = DEFAULT_MIN_DWELL
    method: str = DEFAULT_STEPPING_METHOD
    count_correction: bool = True

    def residues(self, dv: float, count: int, seed: int) -> np.ndarray:
        results = run_calibration_batch(self.ez, self.cfg, StaticNoise(dv), n_p=self.n_p, seed=seed,
                                        size=count, hysteresis_fraction=self.hysteresis_fraction,
                                        min_dwell=self.min_dwell, method=self.method,
                                        count_correction=self.count_correction)
        return np.array([dv - r.dv_c for r in results])


@dataclass
class FidelityReport:
    """Raw and calibrated fidelity against the noise value at t = 0."""
    gate: str
    noise_values: np.ndarray
    fidelity_raw: np.ndarray
    fidelity_raw_stderr: np.ndarray
    fidelity_calibrated: np.ndarray
    fidelity_calibrated_stderr: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'dv0': self.noise_values,
            'F_raw_mean': self.fidelity_raw,
            'F_raw_stderr': self.fidelity_raw_stderr,
            'F_cal_mean': self.fidelity_calibrated,
            'F_cal_stderr': self.fidelity_calibrated_stderr,
        })


def _fidelity_point(gate: GateSpec, dv: float, source: Optional[ResidueSource],
                    realizations: int, seed: int, psi_i: np.ndarray) -> Tuple[float, float, float, float]:
    raw = gate_fidelity(gate, dv, psi_i)
    if source is None:
        return raw, 0.0, float('nan'), float('nan')
    residues = source.residues(dv, realizations, seed)
    calibrated = np.array([gate_fidelity(gate, r, psi_i) for r in residues])
    stderr = float(calibrated.std(ddof=1) / math.sqrt(calibrated.size)) if calibrated.size > 1 else 0.0
    return raw, 0.0, float(calibrated.mean()), stderr


def fidelity_curve(gate: GateSpec, dv_range: Sequence[float],
                   residues: Optional[ResidueSource] = None,
                   realizations: int = MIN_FIDELITY_REALIZATIONS, seed: int = 0,
                   psi_i: np.ndarray = KET_0, jobs: int = 1) -> FidelityReport:
    """
    Gate fidelity with the raw noise dV(0) and with the calibrated residue.

    Args:
        gate: gate to evaluate
        dv_range: quasi-static noise values
        residues: source of calibration residues; without one the calibrated curve is NaN
        realizations: calibrations averaged per point
        seed: master seed, point k uses derive_seed(seed, k)
        psi_i: input state
        jobs: worker processes over points

    Returns:
        FidelityReport
    """
    if residues is not None and realizations < MIN_FIDELITY_REALIZATIONS:
        raise InvalidParameterError(
            f"calibrated fidelity needs >= {MIN_FIDELITY_REALIZATIONS} realizations, got {realizations}")
    values = np.asarray(dv_range, dtype=float)
    tasks = [(gate, float(dv), residues, realizations, derive_seed(seed, k), psi_i)
             for k, dv in enumerate(values)]
    points = np.array(run_parallel(_fidelity_point, tasks, jobs), dtype=float).reshape(len(tasks), 4)
    logger.info("fidelity curve for %s over %d noise values", gate.name, values.size)
    return FidelityReport(gate=gate.name, noise_values=values,
                          fidelity_raw=points[:, 0], fidelity_raw_stderr=points[:, 1],
                          fidelity_calibrated=points[:, 2], fidelity_calibrated_stderr=points[:, 3])


def infidelity_slope(gate: GateSpec, dv_values: Sequence[float], psi_i: np.ndarray = KET_0) -> float:
    """Slope of log(1 - F) against log|dV|; 2 for a quadratic law."""
    dv = np.abs(np.asarray(dv_values, dtype=float))
    infidelity = np.array([1.0 - gate_fidelity(gate, v, psi_i) for v in dv])
    mask = (dv > 0) & (infidelity > 0)
    if np.count_nonzero(mask) < 2:
        raise InvalidParameterError("need two noise values with measurable infidelity")
    slope, _ = np.polyfit(np.log(dv[mask]), np.log(infidelity[mask]), 1)
    return float(slope)


def fit_quadratic_infidelity(dv_values: Sequence[float], fidelities: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares fit of 1 - F = c dV^2.

    Returns:
        (c, R^2)
    """
    dv = np.asarray(dv_values, dtype=float)
    infidelity = 1.0 - np.asarray(fidelities, dtype=float)
    x = dv ** 2
    denominator = float(np.sum(x * x))
    if denominator == 0:
        raise InvalidParameterError("all noise values are zero")
    c = float(np.sum(x * infidelity) / denominator)
    residual = float(np.sum((infidelity - c * x) ** 2))
    total = float(np.sum((infidelity - infidelity.mean()) ** 2))
    r_squared = 1.0 - residual / total if total > 0 else 1.0
    return c, r_squared
