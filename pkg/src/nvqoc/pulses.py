"""Pulse families: constant SPAM rotations and the shaped dCRAB microwave pulse.

A :class:`ConstantPulse` rotates by ``theta`` about the axis at angle ``phi``
in the x-y plane (``phi = 0`` is x, ``pi/2`` is y). Its Rabi frequency is
``theta / duration``: the off-diagonal entries of the control Hamiltonian
carry ``Omega / 2``, so a resonant drive of duration ``T`` rotates by
``Omega T``.

A :class:`ShapedPulse` has amplitude ``Omega0 * g(t) * f(t)``, hard-clipped
to the microwave bound, where ``g`` is a Gaussian-flank flat-top envelope and
``f`` a sum of randomised sine/cosine terms accumulated over dCRAB
super-iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from nvqoc.quantum import TimeGrid, propagate
from nvqoc.system import (
    MW_AMPLITUDE_BOUND,
    TAU,
    Channel,
    ChannelDrive,
    SystemParams,
    TransitionId,
    hamiltonian_sampler,
    max_frequency,
    transition_frequency,
)

PULSE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConstantPulse:
    transition: TransitionId
    theta: float
    phi: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"pulse duration must be positive, got {self.duration}")
        bound = self.transition.channel.amplitude_bound
        if abs(self.amplitude) > bound * (1 + 1e-12):
            raise ValueError(
                f"{self.transition.name}: Rabi frequency {abs(self.amplitude) / TAU:.6g} MHz "
                f"exceeds the {self.transition.channel.value} bound {bound / TAU:.6g} MHz"
            )

    @property
    def amplitude(self) -> float:
        return self.theta / self.duration


@dataclass(frozen=True)
class EnvelopeSpec:
    """Flat-top with Gaussian flanks; rise time is 10 % of the pulse."""

    rise_fraction: float = 0.1

    def rise_time(self, duration: float) -> float:
        return self.rise_fraction * duration

    def sigma(self, duration: float) -> float:
        return self.rise_time(duration) / 4.0

    def alpha(self, duration: float) -> float:
        t_r = self.rise_time(duration)
        return 1.0 - math.exp(-(t_r**2) / (2.0 * self.sigma(duration) ** 2))


def envelope_value(env: EnvelopeSpec, duration: float, t):
    """Envelope ``g(t)`` on ``[0, duration]``; raises outside that interval."""
    ts = np.asarray(t, dtype=float)
    eps = 1e-12 * duration
    if np.any(ts < -eps) or np.any(ts > duration + eps):
        raise ValueError(f"envelope evaluated outside [0, {duration}]")
    t_r = env.rise_time(duration)
    two_s2 = 2.0 * env.sigma(duration) ** 2
    floor = math.exp(-(t_r**2) / two_s2)
    alpha = env.alpha(duration)
    rise = (np.exp(-((ts - t_r) ** 2) / two_s2) - floor) / alpha
    fall = (np.exp(-((ts - duration + t_r) ** 2) / two_s2) - floor) / alpha
    g = np.where(ts <= t_r, rise, np.where(ts >= duration - t_r, fall, 1.0))
    g = np.clip(g, 0.0, 1.0)
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class DcrabBasis:
    """Terms ``(a_k, b_k, omega_k)`` from one super-iteration.

    ``omega_k`` were drawn for a pulse of length ``reference_duration``;
    when the pulse is stretched the basis is stretched with it.
    """

    terms: tuple[tuple[float, float, float], ...]
    super_iteration_index: int = 0
    reference_duration: float = 1.0

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([w for _, _, w in self.terms], dtype=float)

    def with_coefficients(self, a: Sequence[float], b: Sequence[float]) -> "DcrabBasis":
        terms = tuple((float(ak), float(bk), w) for ak, bk, (_, _, w) in zip(a, b, self.terms))
        return replace(self, terms=terms)


def modulation_value(basis: Sequence[DcrabBasis], t):
    """``sum_j sum_k a_k sin(omega_k t) + b_k cos(omega_k t)``, literally."""
    ts = np.asarray(t, dtype=float)
    out = np.zeros_like(ts)
    for b in basis:
        for a_k, b_k, w in b.terms:
            out = out + a_k * np.sin(w * ts) + b_k * np.cos(w * ts)
    return out


def draw_random_frequencies(duration: float, n_basis: int, rng) -> np.ndarray:
    """One frequency per band ``[2pi(k-1)/T, 2pi k/T]``, ``k = 1..n_basis``."""
    if n_basis < 1:
        raise ValueError("n_basis must be >= 1")
    rng = np.random.default_rng(rng)
    k = np.arange(1, n_basis + 1)
    return TAU * (k - 1 + rng.uniform(0.0, 1.0, size=n_basis)) / duration


@dataclass(frozen=True)
class ShapedPulse:
    omega0: float
    carrier: float
    phase: float
    duration: float
    envelope: EnvelopeSpec = field(default_factory=EnvelopeSpec)
    modulation: tuple[DcrabBasis, ...] = ()

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"pulse duration must be positive, got {self.duration}")

    def replace(self, **changes) -> "ShapedPulse":
        return replace(self, **changes)

    def modulation_at(self, t):
        """``f(t)`` with each basis stretched to the current duration."""
        ts = np.asarray(t, dtype=float)
        out = np.zeros_like(ts)
        for b in self.modulation:
            out = out + modulation_value([b], ts * (b.reference_duration / self.duration))
        return out

    def max_modulation_rate(self) -> float:
        rates = [w * b.reference_duration / self.duration for b in self.modulation for w in b.frequencies]
        return max(rates, default=0.0)


def shaped_amplitude(p: ShapedPulse, t):
    """``Omega0 g(t) f(t)`` clipped to the microwave bound (saturation, not rescaling)."""
    raw = p.omega0 * envelope_value(p.envelope, p.duration, t) * p.modulation_at(t)
    return np.clip(raw, -MW_AMPLITUDE_BOUND, MW_AMPLITUDE_BOUND)


def compile_to_channel(pulse, p: SystemParams) -> ChannelDrive:
    if isinstance(pulse, ConstantPulse):
        amp = pulse.amplitude
        return ChannelDrive(
            channel=pulse.transition.channel,
            amplitude=lambda t, a=amp: np.full(np.shape(t), a),
            phase=pulse.phi,
            carrier=transition_frequency(p, pulse.transition),
            duration=pulse.duration,
            peak=abs(amp),
        )
    if isinstance(pulse, ShapedPulse):
        return ChannelDrive(
            channel=Channel.MW,
            amplitude=lambda t, sp=pulse: shaped_amplitude(sp, t),
            phase=pulse.phase,
            carrier=pulse.carrier,
            duration=pulse.duration,
            peak=min(abs(pulse.omega0) * _modulation_bound(pulse), MW_AMPLITUDE_BOUND),
            bandwidth=max(pulse.max_modulation_rate(), 1.0 / pulse.envelope.sigma(pulse.duration)),
        )
    raise TypeError(f"cannot compile {type(pulse).__name__}")


def _modulation_bound(pulse: ShapedPulse) -> float:
    return sum(abs(a) + abs(b) for basis in pulse.modulation for a, b, _ in basis.terms)


def pulse_grid(p: SystemParams, drive: ChannelDrive, *, rwa: bool = True, refine: int = 1) -> TimeGrid:
    grid = TimeGrid.resolving(drive.duration, max_frequency(p, [drive], rwa=rwa))
    return grid.refined(refine) if refine > 1 else grid


def pulse_propagator(p: SystemParams, pulse, *, rwa: bool = True, refine: int = 1) -> np.ndarray:
    """Propagator of one pulse, timed from its own start, in the rotating frame.

    Results are memoised on ``(system, pulse, rwa, refine)``: calibration
    queries the same pulse for its measured and its reference score.
    """
    return _cached_propagator(p, pulse, rwa, refine)


@lru_cache(maxsize=16)
def _cached_propagator(p: SystemParams, pulse, rwa: bool, refine: int) -> np.ndarray:
    drive = compile_to_channel(pulse, p)
    return propagate(hamiltonian_sampler(p, [drive], rwa=rwa), pulse_grid(p, drive, rwa=rwa, refine=refine))


def free_propagator(p: SystemParams, duration: float, *, refine: int = 1) -> np.ndarray:
    grid = TimeGrid.resolving(duration, max_frequency(p, []))
    return propagate(hamiltonian_sampler(p, []), grid.refined(refine) if refine > 1 else grid)


# ---------------------------------------------------------------- files


def _mhz(x: float) -> float:
    return x / TAU


def shaped_pulse_to_dict(pulse: ShapedPulse, metadata: dict | None = None) -> dict:
    return {
        "format_version": PULSE_FORMAT_VERSION,
        "kind": "shaped_mw_pulse",
        "units": {"frequencies": "MHz", "times": "us", "phase": "rad"},
        "omega0": _mhz(pulse.omega0),
        "carrier": _mhz(pulse.carrier),
        "phase": pulse.phase,
        "duration": pulse.duration,
        "envelope": {"rise_fraction": pulse.envelope.rise_fraction},
        "modulation": [
            {
                "super_iteration_index": b.super_iteration_index,
                "reference_duration": b.reference_duration,
                "terms": [{"a": a, "b": bb, "omega": _mhz(w)} for a, bb, w in b.terms],
            }
            for b in pulse.modulation
        ],
        "metadata": metadata or {},
    }


def shaped_pulse_from_dict(d: dict) -> ShapedPulse:
    if d.get("format_version") != PULSE_FORMAT_VERSION or d.get("kind") != "shaped_mw_pulse":
        raise ValueError("not a shaped pulse file (format_version/kind mismatch)")
    return ShapedPulse(
        omega0=float(d["omega0"]) * TAU,
        carrier=float(d["carrier"]) * TAU,
        phase=float(d["phase"]),
        duration=float(d["duration"]),
        envelope=EnvelopeSpec(float(d["envelope"]["rise_fraction"])),
        modulation=tuple(
            DcrabBasis(
                terms=tuple((float(t["a"]), float(t["b"]), float(t["omega"]) * TAU) for t in b["terms"]),
                super_iteration_index=int(b["super_iteration_index"]),
                reference_duration=float(b["reference_duration"]),
            )
            for b in d["modulation"]
        ),
    )
