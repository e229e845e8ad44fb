"""
Qubit State and Hamiltonian Primitives
Two-level density matrices, the degeneracy-point Hamiltonian and exact unitary stepping
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from config.constants import (
    DEFAULT_STEPPING_METHOD,
    PHYSICALITY_TOLERANCE,
    STEP_SANITY_LIMIT,
    STEPPING_METHODS,
)
from utils.error_handler import ConfigurationError, InvalidParameterError, NumericalRangeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_RANGE_TOLERANCE = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class DensityMatrix:
    """
    Trace-one qubit state stored as (rho00, rho01); rho11 is derived.

    rho10 is the conjugate of rho01 and is never stored.
    """
    rho00: float
    rho01: complex = 0j

    def __post_init__(self):
        if not (math.isfinite(self.rho00) and np.isfinite(self.rho01)):
            raise InvalidParameterError("density matrix entries must be finite")
        if not -_RANGE_TOLERANCE <= self.rho00 <= 1.0 + _RANGE_TOLERANCE:
            raise InvalidParameterError(
                f"rho00={self.rho00} outside [0, 1]", invariant="rho00, rho11 in [0, 1]")
        object.__setattr__(self, 'rho00', float(self.rho00))
        object.__setattr__(self, 'rho01', complex(self.rho01))

    @property
    def rho11(self) -> float:
        return 1.0 - self.rho00

    @classmethod
    def ground(cls) -> 'DensityMatrix':
        return cls(1.0, 0j)

    @classmethod
    def excited(cls) -> 'DensityMatrix':
        return cls(0.0, 0j)

    @classmethod
    def maximally_mixed(cls) -> 'DensityMatrix':
        return cls(0.5, 0j)

    @classmethod
    def from_pure(cls, psi: np.ndarray) -> 'DensityMatrix':
        """Build |psi><psi| from a (possibly unnormalised) state vector."""
        psi = np.asarray(psi, dtype=complex)
        norm = np.linalg.norm(psi)
        if psi.shape != (2,) or norm == 0:
            raise InvalidParameterError("pure state must be a nonzero 2-vector")
        psi = psi / norm
        return cls(abs(psi[0]) ** 2, psi[0] * np.conj(psi[1]))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> 'DensityMatrix':
        """Build from a 2x2 matrix, normalising the trace."""
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (2, 2):
            raise InvalidParameterError("density matrix must be 2x2")
        if not np.allclose(matrix, matrix.conj().T, atol=1e-10):
            raise InvalidParameterError("density matrix must be Hermitian")
        trace = np.real(np.trace(matrix))
        if trace <= 0:
            raise InvalidParameterError("density matrix trace must be positive")
        return cls(np.real(matrix[0, 0]) / trace, matrix[0, 1] / trace)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.rho00, self.rho01],
                         [np.conj(self.rho01), self.rho11]], dtype=complex)

    def bloch_vector(self) -> np.ndarray:
        """(x, y, z) with rho = (1 + x sx + y sy + z sz) / 2."""
        return np.array([2.0 * self.rho01.real, -2.0 * self.rho01.imag, 2.0 * self.rho00 - 1.0])

    @classmethod
    def from_bloch(cls, vector: np.ndarray) -> 'DensityMatrix':
        x, y, z = (float(v) for v in vector)
        return cls(min(max((1.0 + z) / 2.0, 0.0), 1.0), complex(x, -y) / 2.0)

    def is_physical(self, tol: float = 1e-9) -> bool:
        """Positivity check |rho01|^2 <= rho00 rho11."""
        return abs(self.rho01) ** 2 <= self.rho00 * self.rho11 + tol


@dataclass(frozen=True)
class QubitHamiltonian:
    """hbar [[-E_z, off_diag], [off_diag, E_z]] with off_diag = dV + control shift."""
    ez: float
    off_diag: float

    def matrix(self) -> np.ndarray:
        return np.array([[-self.ez, self.off_diag], [self.off_diag, self.ez]], dtype=float)

    def norm(self) -> float:
        """Spectral norm, equal to the half splitting sqrt(E_z^2 + off_diag^2)."""
        return math.hypot(self.ez, self.off_diag)


def make_hamiltonian(ez: float, dv: float, shift: float = 0.0) -> QubitHamiltonian:
    """
    Build the degeneracy-point Hamiltonian with off-diagonal noise.

    Args:
        ez: half level splitting E_z
        dv: instantaneous noise value dV
        shift: constant control shift added to the off-diagonal element

    Returns:
        QubitHamiltonian with off_diag = dv + shift
    """
    for name, value in (('ez', ez), ('dv', dv), ('shift', shift)):
        if not math.isfinite(value):
            raise InvalidParameterError(f"{name} must be finite, got {value}")
    return QubitHamiltonian(float(ez), float(dv) + float(shift))


def check_step(ez: ArrayLike, off_diag: ArrayLike, dt: float) -> None:
    """Raise ConfigurationError unless dt > 0 and dt * ||H|| <= STEP_SANITY_LIMIT."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}", invariant="dt > 0")
    worst = float(np.max(np.hypot(ez, off_diag)))
    if dt * worst > STEP_SANITY_LIMIT:
        raise ConfigurationError(
            f"dt*||H|| = {dt * worst:.4g} exceeds {STEP_SANITY_LIMIT}",
            invariant=f"dt*||H|| <= {STEP_SANITY_LIMIT}",
        )


def rotation_coefficients(ez: ArrayLike, off_diag: ArrayLike, dt: float,
                          method: str = DEFAULT_STEPPING_METHOD) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Coefficients (a2, b2, ba) of one Hamiltonian step.

    The step maps (p, q) = (rho00, rho01) to
        q' = a2 q + b2 conj(q) + ba (1 - 2p)
        p' = p + b2 (1 - 2p) - 2 Re(ba q)
    For `exact` this is U rho U^dagger with U = cos(w dt) - i sin(w dt) H / w;
    for `euler` it is rho - i [H, rho] dt.
    """
    if method not in STEPPING_METHODS:
        raise InvalidParameterError(f"unknown stepping method '{method}', choose from {STEPPING_METHODS}")
    ez = np.asarray(ez, dtype=float)
    v = np.asarray(off_diag, dtype=float)

    if method == 'euler':
        a2 = np.broadcast_to(1.0 + 2j * ez * dt, np.broadcast(ez, v).shape).astype(complex)
        b2 = np.zeros(a2.shape)
        ba = -1j * v * dt + np.zeros(a2.shape)
        return a2, b2, ba

    omega = np.hypot(ez, v)
    cos_term = np.cos(omega * dt)
    # sin(w dt) / w, finite at w = 0
    sin_over_w = dt * np.sinc(omega * dt / np.pi)
    a = ez * sin_over_w
    b = v * sin_over_w
    u00 = cos_term + 1j * a
    return u00 * u00, b * b, b * (a - 1j * cos_term)


def apply_rotation(p: ArrayLike, q: ArrayLike, coefficients) -> Tuple[np.ndarray, np.ndarray]:
    """Apply precomputed rotation coefficients to (rho00, rho01) arrays."""
    a2, b2, ba = coefficients
    w = 1.0 - 2.0 * p
    p_new = p + b2 * w - 2.0 * np.real(ba * q)
    q_new = a2 * q + b2 * np.conj(q) + ba * w
    return p_new, q_new


def physicality_excess(p: ArrayLike, q: ArrayLike) -> np.ndarray:
    """How far (rho00, rho01) lies outside the state set; <= 0 for a physical state."""
    p = np.asarray(p, dtype=float)
    return np.maximum.reduce([-p, p - 1.0, np.abs(q) ** 2 - p * (1.0 - p)])


def check_physical(p: ArrayLike, q: ArrayLike, step: int = 0,
                   tolerance: float = PHYSICALITY_TOLERANCE) -> None:
    """Raise NumericalRangeError if any state leaves the Bloch ball by more than tolerance."""
    worst = float(np.max(physicality_excess(p, q)))
    if worst > tolerance:
        raise NumericalRangeError(
            f"state left the physical set by {worst:.3g} at step {step}; "
            "use exact stepping or a smaller dt",
            invariant="0 <= rho00 <= 1 and |rho01|^2 <= rho00 rho11",
        )


def evolve_unitary(rho: DensityMatrix, h: QubitHamiltonian, dt: float,
                   method: str = DEFAULT_STEPPING_METHOD) -> DensityMatrix:
    """
    Advance rho by one Hamiltonian step of length dt.

    Args:
        rho: current state
        h: Hamiltonian for the step
        dt: step length, dt * ||H|| must not exceed the step-sanity limit
        method: 'exact' conjugation or the first-order 'euler' update

    Returns:
        The evolved DensityMatrix
    """
    check_step(h.ez, h.off_diag, dt)
    p, q = apply_rotation(rho.rho00, rho.rho01, rotation_coefficients(h.ez, h.off_diag, dt, method))
    if method == 'euler':
        check_physical(p, q)
    return DensityMatrix(float(p), complex(q))


def purity(rho: DensityMatrix) -> float:
    """Tr(rho^2)."""
    return rho.rho00 ** 2 + rho.rho11 ** 2 + 2.0 * abs(rho.rho01) ** 2


def global_phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Frobenius distance between two operators after removing the best global phase."""
    overlap = np.trace(np.conj(v).T @ u)
    phase = np.exp(1j * np.angle(overlap)) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(u - phase * v))
