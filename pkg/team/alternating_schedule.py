"""
Alternating calibration of a logical qubit encoded in two physical qubits.

While one physical qubit holds the logical state and runs gates, the other is
calibrated; the state is then swapped onto the freshly calibrated qubit and the
roles exchange.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.constants import SUPPORTED_GATES
from config.worker_pool import derive_seed
from physics.noise_model import NoiseSource, StaticNoise, sample_noise_model
from protocol.calibration import CalibrationResult, run_calibration_batch, run_calibration_counts
from protocol.gates import KET_0, apply_gate_with_noise, build_gate, fidelity
from utils.error_handler import InvalidParameterError

if TYPE_CHECKING:
    from config.experiment_config import ExperimentConfig

logger = logging.getLogger(__name__)

QUBITS = ('q1', 'q2')


@dataclass
class ScheduleEvent:
    t: float
    qubit: str
    action: str
    detail: Dict[str, object] = field(default_factory=dict)


@dataclass
class ScheduleResult:
    """Event trace and fidelities of one schedule run."""
    ops: List[str]
    events: List[ScheduleEvent]
    segment_fidelities: List[float]
    calibrations: List[CalibrationResult]
    end_to_end_fidelity: float

    @property
    def fidelity_product(self) -> float:
        return float(np.prod(self.segment_fidelities)) if self.segment_fidelities else 1.0

    @property
    def calibration_owners(self) -> List[str]:
        return [e.qubit for e in self.events if e.action == 'calibrate']

    def to_json(self) -> str:
        return json.dumps({
            'ops': self.ops,
            'events': [asdict(e) for e in self.events],
            'segment_fidelities': self.segment_fidelities,
            'fidelity_product': self.fidelity_product,
            'end_to_end_fidelity': self.end_to_end_fidelity,
            'calibrations': [c.to_manifest() for c in self.calibrations],
        }, indent=2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'t': e.t, 'qubit': e.qubit, 'action': e.action} for e in self.events])


class AlternatingScheduler:
    """
    Round-robin owner of the two physical qubits.

    Calibration k runs on QUBITS[k % 2] over [k T, (k + 1) T] with T the full
    two-phase calibration time; gate k runs on the same qubit at (k + 1) T.
    """

    def __init__(self, config: 'ExperimentConfig', seed: int, residue_mode: str = 'trajectory'):
        if residue_mode not in ('counts', 'trajectory'):
            raise InvalidParameterError(f"unknown residue mode '{residue_mode}'")
        self.config = config
        self.seed = seed
        self.residue_mode = residue_mode
        self.calibration_time = 2.0 * config.phase_duration
        self.noises: Dict[str, NoiseSource] = {
            name: self._qubit_noise(index) for index, name in enumerate(QUBITS, start=1)
        }

    def _qubit_noise(self, index: int) -> NoiseSource:
        settings = self.config.noise
        if settings.static_dv is not None:
            return StaticNoise(settings.static_dv)
        return sample_noise_model(settings.spec, derive_seed(settings.noise_seed, index))

    def owner(self, k: int) -> str:
        return QUBITS[k % 2]

    def calibrate(self, n_ops: int) -> List[CalibrationResult]:
        """All calibrations of the schedule, batched per physical qubit."""
        config = self.config
        results: List[Optional[CalibrationResult]] = [None] * n_ops
        for parity, name in enumerate(QUBITS):
            slots = list(range(parity, n_ops, 2))
            if not slots:
                continue
            noise = self.noises[name]
            starts = np.array([k * self.calibration_time for k in slots])
            qubit_seed = derive_seed(self.seed, parity + 1)
            if self.residue_mode == 'trajectory':
                batch = run_calibration_batch(
                    config.ez, config.detector, noise, n_p=config.protocol.n_p, seed=qubit_seed,
                    size=len(slots), t0=starts, hysteresis_fraction=config.protocol.hysteresis_fraction,
                    min_dwell=config.protocol.min_dwell, method=config.run.method,
                    count_correction=config.protocol.count_correction)
            else:
                batch = [run_calibration_counts(config.ez, config.gamma_m, noise, config.protocol.n_p,
                                                rng=np.random.default_rng(derive_seed(qubit_seed, k)),
                                                t0=float(t0),
                                                count_correction=config.protocol.count_correction)
                         for k, t0 in zip(slots, starts)]
            for k, result in zip(slots, batch):
                results[k] = result
        return results

    def run(self, ops: Sequence[str]) -> ScheduleResult:
        ops = list(ops)
        if not ops:
            raise InvalidParameterError("schedule needs at least one operation")
        unknown = [op for op in ops if op not in SUPPORTED_GATES]
        if unknown:
            raise InvalidParameterError(f"unknown gate(s) {unknown}, choose from {SUPPORTED_GATES}")

        calibrations = self.calibrate(len(ops))
        period = self.calibration_time
        events = [ScheduleEvent(0.0, self.owner(0), 'calibrate')]
        psi_actual = KET_0.copy()
        psi_ideal = KET_0.copy()
        segments = []

        for k, op in enumerate(ops):
            qubit = self.owner(k)
            t_gate = (k + 1) * period
            if k == 0:
                events.append(ScheduleEvent(t_gate, qubit, 'prepare'))
            else:
                events.append(ScheduleEvent(t_gate, qubit, 'swap', {'from': self.owner(k - 1)}))
            if k + 1 < len(ops):
                events.append(ScheduleEvent(t_gate, self.owner(k + 1), 'calibrate'))

            gate = build_gate(op, self.config.ez)
            dv_now = float(self.noises[qubit].values(np.array([t_gate]))[0])
            residue = dv_now - calibrations[k].dv_c
            expected = gate.target_unitary @ psi_actual
            psi_actual = apply_gate_with_noise(gate, residue, psi_actual)
            psi_ideal = gate.target_unitary @ psi_ideal
            segments.append(fidelity(expected, psi_actual))
            events.append(ScheduleEvent(t_gate, qubit, 'gate',
                                        {'gate': op, 'dv': dv_now, 'dv_c': calibrations[k].dv_c}))

        end_to_end = fidelity(psi_ideal, psi_actual)
        logger.info("schedule of %d op(s): end-to-end fidelity %.6f", len(ops), end_to_end)
        return ScheduleResult(ops=ops, events=events, segment_fidelities=segments,
                              calibrations=calibrations, end_to_end_fidelity=end_to_end)


def alternating_schedule(ops: Sequence[str], config: 'ExperimentConfig', seed: Optional[int] = None,
                         residue_mode: Optional[str] = None) -> ScheduleResult:
    """
    Run a gate sequence under the two-qubit alternating calibration schedule.

    Args:
        ops: gate names applied in order to the logical qubit, which starts in |0>
        config: experiment configuration (noise section gives each qubit its own realisation)
        seed: master seed, defaults to config.run.seed
        residue_mode: 'counts' or 'trajectory' calibrations, defaults to config.gates.residue_mode

    Returns:
        ScheduleResult
    """
    seed = config.run.seed if seed is None else seed
    residue_mode = config.gates.residue_mode if residue_mode is None else residue_mode
    return AlternatingScheduler(config, seed, residue_mode).run(ops)
