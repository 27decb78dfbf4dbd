"""Simulated state preparation and readout around a trial gate.

Two probe states are prepared from ``|00><00|``:

* ``rho1`` is realised as the average of four pure states obtained from a
  slow nuclear rotation followed by a fast non-selective electron rotation,
  with the two pulse phases cycled through ``{0, pi} x {0, pi}``. Averaging
  removes all coherences while keeping the diagonal.
* ``rho2`` is the uniform superposition ``|++>``, measured after the
  disentangling rotation ``V2`` that maps the ideal gate output back to
  ``|00>``.

Every readout measures the ``m_s = 0`` population. Diagonals are recovered
from three such populations ``(m1, m2, m3) = (p00+p01, p00+p10, p00+p11)``,
collected with two readout procedures per state:

* ``A``: read ``m1``; the optical readout re-initialises the electron while
  keeping the nuclear populations; a selective pi pulse on ``01<->11`` then
  maps the nuclear population onto the electron and a second readout gives
  ``m2``.
* ``B``: selective pi pulse on ``01<->11``, then read ``m3``.

The alternative ``"rf"`` scheme obtains ``m2`` from a separate sequence (rf pi
on ``10<->11``, then the selective pi) at the cost of a third setting.

SPAM pulses use the instance's true transition frequencies and are simulated
through the full rotating-frame Hamiltonian, so cross-talk and finite pulse
precision enter every measured value.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from nvqoc.metrics import (
    RHO1_SWAPPED_DIAGONAL,
    TARGET_GATE,
    FomReport,
    gate_fidelity_sm,
    population_ms0,
)
from nvqoc.pulses import ConstantPulse, ShapedPulse, pulse_propagator
from nvqoc.quantum import apply_channel, projector
from nvqoc.system import SystemParams, TransitionId

PI = math.pi

RECONSTRUCTION_MATRIX = 0.5 * np.array(
    [
        [1, 1, 1, -1],
        [1, -1, -1, 1],
        [-1, 1, -1, 1],
        [-1, -1, 1, 1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class PhaseTuple:
    phi1: float
    phi2: float


PHASE_TUPLES: tuple[PhaseTuple, ...] = tuple(PhaseTuple(a, b) for a in (0.0, PI) for b in (0.0, PI))


@dataclass(frozen=True)
class PrepAngles:
    theta1: float = 37 * PI / 58
    theta2: float = 3 * PI / 10


@dataclass(frozen=True)
class MeasurementTriple:
    m1: float
    m2: float
    m3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3])


@dataclass(frozen=True)
class SpamConfig:
    """Durations are tied to the instance's own hyperfine period ``T_hf``."""

    rf_periods: int = 57
    fast_mw_duration: float = 0.010
    readout_pi_periods: int = 2
    shots: Optional[int] = None
    angles: PrepAngles = field(default_factory=PrepAngles)
    readout_scheme: str = "reset"

    def __post_init__(self):
        if self.rf_periods < 1 or self.readout_pi_periods < 1 or not self.fast_mw_duration > 0:
            raise ValueError("SPAM pulse durations must be positive")
        if self.shots is not None and self.shots < 4:
            raise ValueError("shots must be >= 4 (shared across four phase variants)")
        if self.readout_scheme not in ("reset", "rf"):
            raise ValueError(f"unknown readout scheme {self.readout_scheme!r}")

    def rf_duration(self, p: SystemParams) -> float:
        return self.rf_periods * p.t_hf

    def readout_pi_duration(self, p: SystemParams) -> float:
        return self.readout_pi_periods * p.t_hf

    def to_dict(self) -> dict:
        return {
            "rf_periods": self.rf_periods,
            "fast_mw_duration": self.fast_mw_duration,
            "readout_pi_periods": self.readout_pi_periods,
            "shots": self.shots,
            "theta1": self.angles.theta1,
            "theta2": self.angles.theta2,
            "readout_scheme": self.readout_scheme,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpamConfig":
        default = cls()
        return cls(
            rf_periods=int(d.get("rf_periods", default.rf_periods)),
            fast_mw_duration=float(d.get("fast_mw_duration", default.fast_mw_duration)),
            readout_pi_periods=int(d.get("readout_pi_periods", default.readout_pi_periods)),
            shots=d.get("shots"),
            angles=PrepAngles(
                float(d.get("theta1", default.angles.theta1)),
                float(d.get("theta2", default.angles.theta2)),
            ),
            readout_scheme=d.get("readout_scheme", default.readout_scheme),
        )


# ------------------------------------------------------- ideal rotations


def rotation(theta: float, phi: float) -> np.ndarray:
    """``exp(-i theta/2 (cos(phi) X + sin(phi) Y))``."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phi)], [-1j * s * np.exp(1j * phi), c]])


def _embed(block: np.ndarray, levels: tuple[int, int]) -> np.ndarray:
    u = np.eye(4, dtype=np.complex128)
    i, j = levels
    u[np.ix_([i, j], [i, j])] = block
    return u


def ideal_pulse(pulse: ConstantPulse) -> np.ndarray:
    """Perfect version of a SPAM pulse.

    Non-selective electron and ``00<->01`` nuclear pulses become single-qubit
    rotations on the whole register; other transitions act on their own
    two-level block only.
    """
    r = rotation(pulse.theta, pulse.phi)
    t = pulse.transition
    if t is TransitionId.E_NONSEL:
        return np.kron(r, np.eye(2))
    if t is TransitionId.N00_01:
        return np.kron(np.eye(2), r)
    return _embed(r, (int(t.lower, 2), int(t.upper, 2)))


def reset_electron(rho: np.ndarray) -> np.ndarray:
    """Optical re-initialisation: electron to ``m_s = 0``, nuclear state kept."""
    blocks = rho.reshape(2, 2, 2, 2)
    nuclear = np.einsum("aiaj->ij", blocks)
    out = np.zeros((4, 4), dtype=np.complex128)
    out[:2, :2] = nuclear
    return out


def reconstruct_diagonal(m: MeasurementTriple) -> np.ndarray:
    """Diagonal ``(p00, p01, p10, p11)`` from the three populations."""
    return RECONSTRUCTION_MATRIX @ np.array([m.m1, m.m2, m.m3, 1.0])


def _sample(p: float, shots: Optional[int], rng) -> float:
    if shots is None:
        return p
    return rng.binomial(shots, min(max(p, 0.0), 1.0)) / shots


class SpamSimulator:
    """SPAM pipeline for one system instance.

    All SPAM propagators and prepared states are computed once; a figure of
    merit evaluation then only needs the trial gate's propagator. The
    ``ledger`` counts distinct preparation recipes and readout settings used
    by the most recent :meth:`measured_fj` call.
    """

    def __init__(self, system: SystemParams, cfg: SpamConfig = SpamConfig(), *, ideal: bool = False, refine: int = 1):
        self.system = system
        self.cfg = cfg
        self.ideal = ideal
        self.refine = refine
        self.ledger: Counter = Counter()
        self._cache: dict = {}

    # -- pulse library ---------------------------------------------------

    def pulses(self) -> dict:
        p, c = self.system, self.cfg
        rf, fast, ro = c.rf_duration(p), c.fast_mw_duration, c.readout_pi_duration(p)
        th1, th2 = c.angles.theta1, c.angles.theta2
        lib = {
            ("prep_rf", 0.0): ConstantPulse(TransitionId.N00_01, th1, 0.0, rf),
            ("prep_rf", PI): ConstantPulse(TransitionId.N00_01, th1, PI, rf),
            ("prep_mw", 0.0): ConstantPulse(TransitionId.E_NONSEL, th2, 0.0, fast),
            ("prep_mw", PI): ConstantPulse(TransitionId.E_NONSEL, th2, PI, fast),
            "rho2_rf": ConstantPulse(TransitionId.N00_01, PI / 2, PI / 2, rf),
            "rho2_mw": ConstantPulse(TransitionId.E_NONSEL, PI / 2, PI / 2, fast),
            "v2_mw": ConstantPulse(TransitionId.E_NONSEL, -PI / 2, PI / 2, fast),
            "v2_rf": ConstantPulse(TransitionId.N00_01, -PI / 2, 0.0, rf),
            "readout_pi": ConstantPulse(TransitionId.E01_11, PI, 0.0, ro),
            "rf_pi": ConstantPulse(TransitionId.N10_11, PI, 0.0, rf),
        }
        return lib

    def unitary(self, key) -> np.ndarray:
        ck = ("u", key)
        if ck not in self._cache:
            pulse = self.pulses()[key]
            self._cache[ck] = ideal_pulse(pulse) if self.ideal else pulse_propagator(self.system, pulse, refine=self.refine)
        return self._cache[ck]

    # -- preparation -----------------------------------------------------

    def prepare_rho1_variant(self, s: PhaseTuple) -> np.ndarray:
        ck = ("rho1", s)
        if ck not in self._cache:
            u = self.unitary(("prep_mw", s.phi2)) @ self.unitary(("prep_rf", s.phi1))
            self._cache[ck] = apply_channel(u, projector("00"))
        return self._cache[ck]

    def prepare_rho1_average(self) -> np.ndarray:
        return sum(self.prepare_rho1_variant(s) for s in PHASE_TUPLES) / len(PHASE_TUPLES)

    def prepare_rho2(self) -> np.ndarray:
        if "rho2" not in self._cache:
            u = self.unitary("rho2_mw") @ self.unitary("rho2_rf")
            self._cache["rho2"] = apply_channel(u, projector("00"))
        return self._cache["rho2"]

    def v2(self) -> np.ndarray:
        """Electron ``(-pi/2)_y`` first, then nuclear ``(-pi/2)_x``."""
        return self.unitary("v2_rf") @ self.unitary("v2_mw")

    def apply_v2(self, rho: np.ndarray) -> np.ndarray:
        return apply_channel(self.v2(), rho)

    # -- readout ---------------------------------------------------------

    def readout_triple(self, rho: np.ndarray, rng=None, shots: Optional[int] = None) -> MeasurementTriple:
        shots = self.cfg.shots if shots is None else shots
        if shots is not None and rng is None:
            raise ValueError("a random generator is required when shots are set")
        sel = self.unitary("readout_pi")
        m1 = population_ms0(rho)
        m3 = population_ms0(apply_channel(sel, rho))
        if self.cfg.readout_scheme == "reset":
            m2 = population_ms0(apply_channel(sel, reset_electron(rho)))
        else:
            m2 = population_ms0(apply_channel(sel @ self.unitary("rf_pi"), rho))
        return MeasurementTriple(*(_sample(m, shots, rng) for m in (m1, m2, m3)))

    def readout_settings(self) -> tuple[str, ...]:
        if self.cfg.readout_scheme == "reset":
            return ("A:read-reset-selective_pi-read", "B:selective_pi-read")
        return ("read", "selective_pi-read", "rf_pi-selective_pi-read")

    # -- figure of merit -------------------------------------------------

    def gate_unitary(self, gate) -> np.ndarray:
        if isinstance(gate, ShapedPulse):
            return pulse_propagator(self.system, gate, refine=self.refine)
        return np.asarray(gate, dtype=np.complex128)

    def variant_scores(self, u_gate: np.ndarray, rng=None) -> list[float]:
        shots = None if self.cfg.shots is None else max(1, math.ceil(self.cfg.shots / len(PHASE_TUPLES)))
        rngs = _substreams(rng, len(PHASE_TUPLES))
        scores = []
        for s, r in zip(PHASE_TUPLES, rngs):
            out = apply_channel(u_gate, self.prepare_rho1_variant(s))
            diag = reconstruct_diagonal(self.readout_triple(out, r, shots))
            scores.append(float(RHO1_SWAPPED_DIAGONAL @ diag))
        return scores

    def measured_fj(self, gate, rng=None) -> FomReport:
        """Two-probe figure of merit from simulated measurements only.

        ``gate`` is a :class:`ShapedPulse` or, as an oracle, a 4x4 unitary.
        """
        u = self.gate_unitary(gate)
        if self.cfg.shots is not None:
            rng = np.random.default_rng(rng)
        streams = _substreams(rng, 2)
        self.ledger = Counter()
        self.ledger.update({("prep", "rho1[phase-cycled]"): 1, ("prep", "rho2"): 1})
        for probe in ("rho1", "rho2"):
            for setting in self.readout_settings():
                self.ledger[("measure", probe, setting)] += 1
        term1 = float(np.mean(self.variant_scores(u, streams[0])))
        out2 = self.apply_v2(apply_channel(u, self.prepare_rho2()))
        term2 = float(reconstruct_diagonal(self.readout_triple(out2, streams[1]))[0])
        return FomReport(term1, term2)

    def preparation_count(self) -> int:
        return sum(1 for k in self.ledger if k[0] == "prep")

    def measurement_setting_count(self) -> int:
        return sum(1 for k in self.ledger if k[0] == "measure")

    # -- diagnostics -----------------------------------------------------

    def readout_pi_fidelity(self) -> float:
        return gate_fidelity_sm(self.unitary("readout_pi"), TARGET_GATE)


def _substreams(rng, n: int) -> Sequence:
    if rng is None:
        return [None] * n
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    return np.random.default_rng(rng).spawn(n)


@lru_cache(maxsize=64)
def spam_simulator(system: SystemParams, cfg: SpamConfig = SpamConfig(), ideal: bool = False) -> SpamSimulator:
    """Shared simulator per ``(system, cfg)``; SPAM propagators are expensive."""
    return SpamSimulator(system, cfg, ideal=ideal)


def prepare_rho1_variant(p: SystemParams, s: PhaseTuple, cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    return spam_simulator(p, cfg).prepare_rho1_variant(s)


def prepare_rho2(p: SystemParams, cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    return spam_simulator(p, cfg).prepare_rho2()


def apply_v2(p: SystemParams, rho: np.ndarray, cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    return spam_simulator(p, cfg).apply_v2(rho)


def readout_triple(p: SystemParams, rho: np.ndarray, cfg: SpamConfig = SpamConfig(), rng=None) -> MeasurementTriple:
    return spam_simulator(p, cfg).readout_triple(rho, rng)


def measured_fj(p: SystemParams, gate, cfg: SpamConfig = SpamConfig(), rng=None) -> FomReport:
    return spam_simulator(p, cfg).measured_fj(gate, rng)
