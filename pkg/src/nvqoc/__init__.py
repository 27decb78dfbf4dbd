"""Benchmarking and optimal control of a two-qubit gate on an NV-13C spin register."""

from nvqoc.metrics import TARGET_GATE, FomReport, fj_ideal, fj_of_unitary, gate_fidelity_sm
from nvqoc.pulses import ConstantPulse, DcrabBasis, EnvelopeSpec, ShapedPulse
from nvqoc.quantum import BACKEND, TimeGrid, propagate
from nvqoc.spam import SpamConfig, SpamSimulator, measured_fj
from nvqoc.system import SystemParams, TransitionId

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "TARGET_GATE",
    "ConstantPulse",
    "DcrabBasis",
    "EnvelopeSpec",
    "FomReport",
    "ShapedPulse",
    "SpamConfig",
    "SpamSimulator",
    "SystemParams",
    "TimeGrid",
    "TransitionId",
    "fj_ideal",
    "fj_of_unitary",
    "gate_fidelity_sm",
    "measured_fj",
    "propagate",
]
