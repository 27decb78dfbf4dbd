"""NV electron / 13C nuclear spin register in the computational subspace.

Basis ordering is ``|m_s m_I>`` in ``{|00>, |01>, |10>, |11>}`` with the
electron first. Internal units: angular frequencies in rad/us, times in us,
fields in Gauss. On disk frequencies are linear MHz.

All Hamiltonians here live in the frame rotating with the drift ``H_d``.
They accept a scalar time or a 1-D array of times; arrays give ``(n, 4, 4)``
stacks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

TAU = 2.0 * math.pi

MW_AMPLITUDE_BOUND = TAU * 30.0
RF_AMPLITUDE_BOUND = TAU * 0.040

# gamma_n * 600 G = 2pi * 0.6423 MHz; gamma_e is the free-electron value
DEFAULT_GAMMA_E = TAU * 2.8025
DEFAULT_GAMMA_N = TAU * 1.0705e-3


def rotate_hyperfine_frame(a_zx: float, a_zy: float) -> tuple[float, float]:
    """Rotate the transverse hyperfine component onto x; returns ``(A_zx', 0)``."""
    return math.hypot(a_zx, a_zy), 0.0


@dataclass(frozen=True)
class SystemParams:
    """One NV-13C instance. Angular frequencies in rad/us, ``B0`` in Gauss."""

    D: float = TAU * 2870.0
    B0: float = 600.0
    gamma_e: float = DEFAULT_GAMMA_E
    gamma_n: float = DEFAULT_GAMMA_N
    A_zz: float = TAU * 2.281
    A_zx: float = TAU * 0.339
    A_zy: float = 0.0

    def __post_init__(self):
        for name in ("D", "B0", "gamma_e", "gamma_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def nominal(cls) -> "SystemParams":
        return cls()

    @classmethod
    def from_unrotated(cls, a_zz: float, a_zx: float, a_zy: float, **kw) -> "SystemParams":
        a_zx, a_zy = rotate_hyperfine_frame(a_zx, a_zy)
        return cls(A_zz=a_zz, A_zx=a_zx, A_zy=a_zy, **kw)

    @property
    def omega_e(self) -> float:
        """Bare electron transition ``D - gamma_e B0``."""
        return self.D - self.gamma_e * self.B0

    @property
    def omega_n(self) -> float:
        return self.gamma_n * self.B0

    @property
    def dressed_splitting(self) -> float:
        """Nuclear splitting in the ``m_s = -1`` manifold."""
        return math.sqrt((self.omega_n + self.A_zz) ** 2 + self.A_zx**2 + self.A_zy**2)

    @property
    def t_hf(self) -> float:
        """Characteristic hyperfine period ``2 * 2pi / sqrt(A_zx^2 + A_zz^2)`` in us."""
        return 2.0 * TAU / math.sqrt(self.A_zx**2 + self.A_zz**2)

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        """Linear MHz / Gauss / MHz-per-Gauss representation for files."""
        d = {k: v / TAU for k, v in asdict(self).items()}
        d["B0"] = self.B0
        d["units"] = {"frequencies": "MHz", "B0": "G", "gyromagnetic_ratios": "MHz/G"}
        d["inferred_constants"] = ["gamma_e", "gamma_n"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        names = ("D", "gamma_e", "gamma_n", "A_zz", "A_zx", "A_zy")
        kw = {k: float(d[k]) * TAU for k in names if k in d}
        if "B0" in d:
            kw["B0"] = float(d["B0"])
        return cls(**kw)


class Channel(enum.Enum):
    MW = "mw"
    RF = "rf"

    @property
    def amplitude_bound(self) -> float:
        return MW_AMPLITUDE_BOUND if self is Channel.MW else RF_AMPLITUDE_BOUND


class TransitionId(enum.Enum):
    N00_01 = ("00", "01", Channel.RF)
    N10_11 = ("10", "11", Channel.RF)
    E00_10 = ("00", "10", Channel.MW)
    E01_11 = ("01", "11", Channel.MW)
    E_NONSEL = (None, None, Channel.MW)

    def __init__(self, lower, upper, channel):
        self.lower = lower
        self.upper = upper
        self.channel = channel


@dataclass(frozen=True)
class EnergySpectrum:
    omega_tilde_00: float
    omega_tilde_01: float
    omega_tilde_10: float
    omega_tilde_11: float

    def level(self, label: str) -> float:
        return getattr(self, f"omega_tilde_{label}")


def drift_frequencies(p: SystemParams) -> tuple[float, float, float, float]:
    zn = p.gamma_n * p.B0 / 2.0
    upper = p.D / 3.0 - p.gamma_e * p.B0
    lower = -2.0 * p.D / 3.0
    return (lower - zn, lower + zn, upper - zn, upper + zn)


def eigen_energies(p: SystemParams) -> EnergySpectrum:
    w00, w01, _, _ = drift_frequencies(p)
    centre = p.D / 3.0 - p.gamma_e * p.B0
    half = 0.5 * p.dressed_splitting
    return EnergySpectrum(w00, w01, centre - half, centre + half)


def level_gap(p: SystemParams, lower: str, upper: str) -> float:
    spec = eigen_energies(p)
    return spec.level(upper) - spec.level(lower)


def transition_frequency(p: SystemParams, t: TransitionId) -> float:
    if t is TransitionId.E_NONSEL:
        return 0.5 * (level_gap(p, "00", "10") + level_gap(p, "01", "11"))
    return level_gap(p, t.lower, t.upper)


@dataclass(frozen=True)
class ChannelDrive:
    """A pulse as seen by the control Hamiltonian.

    ``amplitude`` maps times (us) to the real envelope ``Omega(t)`` in rad/us.
    ``peak`` bounds ``|Omega|`` and ``bandwidth`` is the fastest angular rate
    at which ``Omega`` varies; both only feed time-grid selection.
    """

    channel: Channel
    amplitude: Callable[[np.ndarray], np.ndarray]
    phase: float
    carrier: float
    duration: float
    peak: float
    bandwidth: float = 0.0


def _times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _finish(h: np.ndarray, scalar: bool) -> np.ndarray:
    return h[0] if scalar else h


def hf_rotating(p: SystemParams, t) -> np.ndarray:
    ts, scalar = _times(t)
    h = np.zeros((ts.size, 4, 4), dtype=np.complex128)
    h[:, 2, 2] = -0.5 * p.A_zz
    h[:, 3, 3] = 0.5 * p.A_zz
    h[:, 2, 3] = -0.5 * (p.A_zx - 1j * p.A_zy) * np.exp(-1j * p.omega_n * ts)
    h[:, 3, 2] = np.conj(h[:, 2, 3])
    return _finish(h, scalar)


def _drive_values(d: ChannelDrive, ts: np.ndarray) -> np.ndarray:
    amp = np.asarray(d.amplitude(ts), dtype=float)
    bound = d.channel.amplitude_bound
    if amp.size and np.max(np.abs(amp)) > bound * (1 + 1e-12):
        raise ValueError(
            f"{d.channel.value} amplitude {np.max(np.abs(amp)) / TAU:.6g} MHz exceeds "
            f"bound {bound / TAU:.6g} MHz"
        )
    return amp


def _reference(p: SystemParams, channel: Channel) -> float:
    return p.omega_e if channel is Channel.MW else p.omega_n


_COUPLED = {Channel.MW: ((0, 2), (1, 3)), Channel.RF: ((0, 1), (2, 3))}


def control_rotating(p: SystemParams, drives: Sequence[ChannelDrive], t) -> np.ndarray:
    """Rotating-wave control term; upper triangle built, lower mirrored."""
    ts, scalar = _times(t)
    h = np.zeros((ts.size, 4, 4), dtype=np.complex128)
    for d in drives:
        amp = _drive_values(d, ts)
        detuning = _reference(p, d.channel) - d.carrier
        c = 0.5 * amp * np.exp(-1j * d.phase) * np.exp(-1j * detuning * ts)
        for i, j in _COUPLED[d.channel]:
            h[:, i, j] += c
    h += np.conj(np.triu(h, 1).transpose(0, 2, 1))
    return _finish(h, scalar)


def total_hamiltonian(p: SystemParams, drives: Sequence[ChannelDrive], t) -> np.ndarray:
    return hf_rotating(p, t) + control_rotating(p, drives, t)


def lab_frame_control_no_rwa(p: SystemParams, drives: Sequence[ChannelDrive], t) -> np.ndarray:
    """Control term before the rotating-wave approximation.

    The carrier is ``Omega(t) cos(omega_c t - phi)``, whose co-rotating part
    reproduces :func:`control_rotating` exactly; the counter-rotating part
    oscillates at ``omega_ref + omega_c``. Cross-channel terms are dropped as
    in the rotating-wave form.
    """
    ts, scalar = _times(t)
    h = np.zeros((ts.size, 4, 4), dtype=np.complex128)
    for d in drives:
        amp = _drive_values(d, ts)
        ref = _reference(p, d.channel)
        co = np.exp(-1j * d.phase) * np.exp(-1j * (ref - d.carrier) * ts)
        counter = np.exp(1j * d.phase) * np.exp(-1j * (ref + d.carrier) * ts)
        c = 0.5 * amp * (co + counter)
        for i, j in _COUPLED[d.channel]:
            h[:, i, j] += c
    h += np.conj(np.triu(h, 1).transpose(0, 2, 1))
    return _finish(h, scalar)


def hamiltonian_sampler(p: SystemParams, drives: Sequence[ChannelDrive], *, rwa: bool = True):
    control = control_rotating if rwa else lab_frame_control_no_rwa

    def h_of_t(t):
        return hf_rotating(p, t) + control(p, drives, t)

    return h_of_t


def max_frequency(p: SystemParams, drives: Sequence[ChannelDrive], *, rwa: bool = True) -> float:
    """Fastest oscillation (linear MHz) present in the rotating-frame Hamiltonian."""
    rates = [p.omega_n, abs(p.A_zz), p.dressed_splitting]
    for d in drives:
        ref = _reference(p, d.channel)
        rates.append(abs(ref - d.carrier) if rwa else ref + d.carrier)
        rates.append(d.peak)
        rates.append(d.bandwidth)
    return max(rates) / TAU
