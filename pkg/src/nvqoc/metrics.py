"""Figures of merit for the conditional-NOT gate on the NV-13C register."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from nvqoc.quantum import apply_channel, projector

TARGET_GATE = np.array(
    [
        [1, 0, 0, 0],
        [0, 0, 0, -1j],
        [0, 0, 1, 0],
        [0, -1j, 0, 0],
    ],
    dtype=np.complex128,
)
TARGET_GATE.setflags(write=False)

RHO1_DIAGONAL = np.array([0.23, 0.56, 0.06, 0.15])
RHO1 = np.diag(RHO1_DIAGONAL).astype(np.complex128)
RHO2 = np.full((4, 4), 0.25, dtype=np.complex128)
for _m in (RHO1, RHO2):
    _m.setflags(write=False)

# the target swaps the |01> and |11> populations of rho1
RHO1_SWAPPED_DIAGONAL = RHO1_DIAGONAL[[0, 3, 2, 1]]
SUM_LAMBDA_SQ = float(np.sum(RHO1_DIAGONAL**2))


@dataclass(frozen=True)
class FomReport:
    """Two-probe figure of merit.

    ``f_j_raw = term_rho1 + term_rho2``; the normalised value rescales the
    first term by ``sum(lambda^2)`` so that the target gate scores 1.
    ``f_sm`` is ``None`` when the report comes from simulated measurements.
    """

    term_rho1: float
    term_rho2: float
    f_sm: Optional[float] = None

    @property
    def f_j_raw(self) -> float:
        return self.term_rho1 + self.term_rho2

    @property
    def f_j_normalized(self) -> float:
        return 0.5 * (self.term_rho1 / SUM_LAMBDA_SQ + self.term_rho2)

    @property
    def f_j_max(self) -> float:
        return 1.0 + SUM_LAMBDA_SQ

    def as_row(self) -> dict:
        row = asdict(self)
        row["f_j_raw"] = self.f_j_raw
        row["f_j_normalized"] = self.f_j_normalized
        return row


def gate_fidelity_sm(u: np.ndarray, target: np.ndarray = TARGET_GATE) -> float:
    """``|Tr(U_targ^dagger U)|^2 / 16``."""
    return float(abs(np.trace(target.conj().T @ u)) ** 2 / 16.0)


def fj_ideal(
    channel: Callable[[np.ndarray], np.ndarray],
    probes: tuple[np.ndarray, np.ndarray] = (RHO1, RHO2),
    target: np.ndarray = TARGET_GATE,
) -> FomReport:
    """Noise-free two-probe score ``Tr(U_t rho U_t^dagger Phi(rho))`` per probe."""
    terms = []
    for rho in probes:
        ideal = apply_channel(target, rho)
        terms.append(float(np.real(np.trace(ideal @ channel(rho)))))
    return FomReport(*terms)


def unitary_channel(u: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    return lambda rho: apply_channel(u, rho)


def fj_of_unitary(u: np.ndarray) -> FomReport:
    """Ideal-SPAM score of a unitary gate, with its reference fidelity attached."""
    rep = fj_ideal(unitary_channel(u))
    return FomReport(rep.term_rho1, rep.term_rho2, gate_fidelity_sm(u))


def population_ms0(rho: np.ndarray) -> float:
    return float(np.real(rho[0, 0] + rho[1, 1]))


def readout_contrast(pi_pulse: np.ndarray) -> float:
    """Population contrast of the conditional flip on ``|00>`` versus ``|01>``."""
    p00 = population_ms0(apply_channel(pi_pulse, projector("00")))
    p01 = population_ms0(apply_channel(pi_pulse, projector("01")))
    return abs(p00 - p01)
