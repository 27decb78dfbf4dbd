"""Derivative-free optimisation: Nelder-Mead, dCRAB open loop, closed-loop calibration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from nvqoc.metrics import TARGET_GATE, FomReport, fj_of_unitary, gate_fidelity_sm
from nvqoc.pulses import DcrabBasis, EnvelopeSpec, ShapedPulse, draw_random_frequencies, pulse_propagator
from nvqoc.spam import SpamConfig, SpamSimulator, spam_simulator
from nvqoc.system import TAU, SystemParams, TransitionId, transition_frequency

# ------------------------------------------------------------------ trace


@dataclass(frozen=True)
class TraceRecord:
    eval_index: int
    params: tuple[float, ...]
    value: float
    best_so_far: float
    info: dict = field(default_factory=dict)


class OptimizationTrace:
    """Per-evaluation log; ``best_so_far`` never increases."""

    def __init__(self, param_names: Sequence[str] = ()):
        self.param_names = list(param_names)
        self.records: list[TraceRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best(self) -> float:
        return self.records[-1].best_so_far if self.records else math.inf

    def append(self, params, value: float, info: Optional[dict] = None) -> TraceRecord:
        best = min(self.best, value)
        rec = TraceRecord(len(self.records), tuple(float(x) for x in params), float(value), best, dict(info or {}))
        self.records.append(rec)
        return rec

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    def best_values(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    def info_column(self, key: str) -> np.ndarray:
        return np.array([r.info.get(key, math.nan) for r in self.records], dtype=float)

    def to_csv(self, path) -> None:
        info_keys = sorted({k for r in self.records for k in r.info})
        width = max((len(r.params) for r in self.records), default=0)
        names = self.param_names if len(self.param_names) == width else [f"x{i}" for i in range(width)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval", *names, "fom", "best_so_far", *info_keys])
            for r in self.records:
                params = list(r.params) + [""] * (width - len(r.params))
                w.writerow([r.eval_index, *map(repr, params), repr(r.value), repr(r.best_so_far),
                            *(r.info.get(k, "") for k in info_keys)])


# ------------------------------------------------------------ Nelder-Mead


@dataclass(frozen=True)
class NelderMeadConfig:
    initial_simplex_scale: float | tuple[float, ...] = 0.05
    max_evals: int = 1000
    f_tol: float = 1e-10
    x_tol: float = 1e-8
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5

    def __post_init__(self):
        if np.any(np.asarray(self.initial_simplex_scale) <= 0):
            raise ValueError("initial simplex scales must be positive")

    def scales(self, dim: int) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.initial_simplex_scale, dtype=float), (dim,))
        return s.copy()


def _evaluate(objective, x) -> tuple[float, dict]:
    out = objective(np.array(x))
    value, info = (out if isinstance(out, tuple) else (out, {}))
    value = float(value)
    return (math.inf if math.isnan(value) else value), info


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    cfg: NelderMeadConfig = NelderMeadConfig(),
    trace: Optional[OptimizationTrace] = None,
    info: Optional[dict] = None,
) -> tuple[np.ndarray, float, OptimizationTrace]:
    """Minimise ``objective`` from ``x0``.

    The objective may return a float or ``(float, info_dict)``; the dict is
    stored in the trace. NaN counts as ``+inf``. Vertices are ordered with a
    stable sort so ties keep insertion order.
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    if cfg.max_evals < dim + 1:
        raise ValueError(f"max_evals must be >= dim + 1 = {dim + 1}")
    trace = trace if trace is not None else OptimizationTrace()
    extra = dict(info or {})
    evals = 0

    def f(x):
        nonlocal evals
        value, inf = _evaluate(objective, x)
        evals += 1
        trace.append(x, value, {**extra, **inf})
        return value

    simplex = [x0.copy()]
    scales = cfg.scales(dim)
    for i in range(dim):
        v = x0.copy()
        v[i] += scales[i]
        simplex.append(v)
    values = []
    for v in simplex:
        values.append(f(v))
    if not math.isfinite(values[0]):
        raise ValueError("objective is not finite at x0")

    a, g, c, s = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink
    while evals < cfg.max_evals:
        order = sorted(range(len(simplex)), key=lambda k: values[k])
        simplex = [simplex[k] for k in order]
        values = [values[k] for k in order]
        spread_f = max(abs(v - values[0]) for v in values[1:])
        spread_x = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
        if spread_f <= cfg.f_tol and spread_x <= cfg.x_tol:
            break
        if spread_f <= cfg.f_tol and values[0] == values[-1] and np.isfinite(values[0]):
            # flat objective: nothing left to learn
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = centroid + a * (centroid - worst)
        fr = f(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[0]:
            if evals >= cfg.max_evals:
                simplex[-1], values[-1] = xr, fr
                break
            xe = centroid + g * (xr - centroid)
            fe = f(xe)
            simplex[-1], values[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if evals >= cfg.max_evals:
            break
        if fr < values[-1]:
            xc = centroid + c * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + c * (worst - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        for k in range(1, len(simplex)):
            if evals >= cfg.max_evals:
                break
            simplex[k] = simplex[0] + s * (simplex[k] - simplex[0])
            values[k] = f(simplex[k])

    best = int(np.argmin(values))
    return np.array(simplex[best]), float(values[best]), trace


# -------------------------------------------------------------- open loop


@dataclass(frozen=True)
class DcrabConfig:
    """Open-loop dCRAB search.

    Each super-iteration optimises ``2 n_basis`` new coefficients plus phase,
    carrier offset (in units of ``carrier_unit``) and duration. Coefficients
    multiply the fixed amplitude ``omega0``.
    """

    n_super: int = 15
    n_basis: int = 10
    seed: int = 0
    omega0: float = TAU * 1.0
    guess_duration: float = 1.0
    guess_phase: float = 0.0
    guess_carrier: Optional[float] = None
    carrier_unit: float = TAU * 0.1
    duration_bounds: tuple[float, float] = (0.3, 3.0)
    # initial simplex steps: coefficient, phase (rad), carrier (carrier_unit), duration (us)
    simplex_steps: tuple[float, float, float, float] = (0.2, 0.2, 0.2, 0.02)
    nm: NelderMeadConfig = NelderMeadConfig(max_evals=1000, f_tol=1e-9, x_tol=1e-7)
    envelope: EnvelopeSpec = field(default_factory=EnvelopeSpec)

    def __post_init__(self):
        if self.n_super < 0 or self.n_basis < 1:
            raise ValueError("n_super must be >= 0 and n_basis >= 1")
        lo, hi = self.duration_bounds
        if not 0 < lo < hi:
            raise ValueError("invalid duration bounds")


def guess_pulse(p: SystemParams, cfg: DcrabConfig) -> ShapedPulse:
    carrier = transition_frequency(p, TransitionId.E01_11) if cfg.guess_carrier is None else cfg.guess_carrier
    return ShapedPulse(cfg.omega0, carrier, cfg.guess_phase, cfg.guess_duration, cfg.envelope, ())


def reference_fidelity(p: SystemParams, pulse: ShapedPulse) -> float:
    return gate_fidelity_sm(pulse_propagator(p, pulse), TARGET_GATE)


def dcrab_open_loop(p: SystemParams, cfg: DcrabConfig = DcrabConfig()) -> tuple[ShapedPulse, OptimizationTrace]:
    """Open-loop search that maximises ``F_sm`` directly.

    Super-iteration ``j`` adds ``n_basis`` new terms on top of the frozen best
    modulation so far. Parameters outside their bounds are clipped inside the
    objective, so the simplex may wander but every evaluated pulse is valid.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_basis
    names = [f"a{k}" for k in range(1, n + 1)] + [f"b{k}" for k in range(1, n + 1)] + ["phase", "carrier_offset", "duration"]
    trace = OptimizationTrace(names)
    best = guess_pulse(p, cfg)
    base_carrier = best.carrier
    lo, hi = cfg.duration_bounds
    c, ph, w, d = cfg.simplex_steps
    nm_cfg = replace(cfg.nm, initial_simplex_scale=tuple([c] * (2 * n) + [ph, w, d]))

    def build(x, frozen: ShapedPulse, freqs) -> ShapedPulse:
        duration = float(np.clip(x[2 * n + 2], lo, hi))
        basis = DcrabBasis(tuple(zip(map(float, x[:n]), map(float, x[n:2 * n]), map(float, freqs))), j, frozen.duration)
        return frozen.replace(
            phase=float(x[2 * n]),
            carrier=base_carrier + float(x[2 * n + 1]) * cfg.carrier_unit,
            duration=duration,
            modulation=frozen.modulation + (basis,),
        )

    for j in range(cfg.n_super):
        freqs = draw_random_frequencies(best.duration, n, rng)
        frozen = best
        x0 = np.concatenate([np.zeros(2 * n), [frozen.phase, (frozen.carrier - base_carrier) / cfg.carrier_unit, frozen.duration]])

        def objective(x, frozen=frozen, freqs=freqs):
            return 1.0 - reference_fidelity(p, build(x, frozen, freqs))

        x_best, _, _ = nelder_mead(objective, x0, nm_cfg, trace, {"super_iteration": j})
        best = build(x_best, frozen, freqs)
    return best, trace


# ------------------------------------------------------------ closed loop

CALIBRATION_FIELDS = ("amplitude_scale", "duration_scale", "carrier_shift", "phase_shift")
CALIBRATION_LABELS = {"amplitude_scale": "Ω", "duration_scale": "T", "carrier_shift": "ω", "phase_shift": "φ"}
CALIBRATION_BOUNDS = {
    "amplitude_scale": (0.8, 1.2),
    "duration_scale": (0.8, 1.2),
    "carrier_shift": (-TAU * 0.5, TAU * 0.5),
    "phase_shift": (-math.pi / 4, math.pi / 4),
}
IDENTITY_CALIBRATION = {"amplitude_scale": 1.0, "duration_scale": 1.0, "carrier_shift": 0.0, "phase_shift": 0.0}


@dataclass(frozen=True)
class CalibrationVector:
    amplitude_scale: float = 1.0
    duration_scale: float = 1.0
    carrier_shift: float = 0.0
    phase_shift: float = 0.0

    def __post_init__(self):
        if not self.duration_scale > 0:
            raise ValueError("duration_scale must be positive")

    def apply(self, base: ShapedPulse) -> ShapedPulse:
        """Scale amplitude and duration, shift carrier and phase.

        The modulation stretches with the duration; clipping in the amplitude
        keeps the scaled pulse within the microwave bound.
        """
        return base.replace(
            omega0=base.omega0 * self.amplitude_scale,
            duration=base.duration * self.duration_scale,
            carrier=base.carrier + self.carrier_shift,
            phase=base.phase + self.phase_shift,
        )

    def to_dict(self) -> dict:
        return {
            "amplitude_scale": self.amplitude_scale,
            "duration_scale": self.duration_scale,
            "carrier_shift_MHz": self.carrier_shift / TAU,
            "phase_shift": self.phase_shift,
        }


def subset_label(subset: Sequence[str]) -> str:
    return ",".join(CALIBRATION_LABELS[k] for k in CALIBRATION_FIELDS if k in subset)


def parse_subset(spec) -> tuple[str, ...]:
    """Accept field names or labels (``"Ω,T,ω"``, ``"Omega,T,omega"``)."""
    aliases = {"Ω": "amplitude_scale", "omega0": "amplitude_scale", "Omega": "amplitude_scale", "amplitude": "amplitude_scale",
               "T": "duration_scale", "duration": "duration_scale",
               "ω": "carrier_shift", "omega": "carrier_shift", "carrier": "carrier_shift",
               "φ": "phase_shift", "phi": "phase_shift", "phase": "phase_shift"}
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    out = set()
    for it in items:
        it = it.strip()
        name = it if it in CALIBRATION_FIELDS else aliases.get(it)
        if name is None:
            raise ValueError(f"unknown calibration parameter {it!r}")
        out.add(name)
    if not out:
        raise ValueError("empty calibration subset")
    return tuple(k for k in CALIBRATION_FIELDS if k in out)


DEFAULT_SUBSETS: tuple[tuple[str, ...], ...] = (
    CALIBRATION_FIELDS,
    ("amplitude_scale", "duration_scale", "carrier_shift"),
    ("amplitude_scale", "duration_scale", "phase_shift"),
    ("amplitude_scale", "carrier_shift", "phase_shift"),
    ("duration_scale", "carrier_shift", "phase_shift"),
)


def calibration_from_unit(u: np.ndarray, subset: Sequence[str]) -> CalibrationVector:
    """Map unit-box coordinates (clipped to ``[0, 1]``) to a calibration vector."""
    values = dict(IDENTITY_CALIBRATION)
    for k, ui in zip(subset, np.clip(u, 0.0, 1.0)):
        lo, hi = CALIBRATION_BOUNDS[k]
        values[k] = lo + float(ui) * (hi - lo)
    return CalibrationVector(**values)


def calibration_to_unit(cal: CalibrationVector, subset: Sequence[str]) -> np.ndarray:
    out = []
    for k in subset:
        lo, hi = CALIBRATION_BOUNDS[k]
        out.append((getattr(cal, k) - lo) / (hi - lo))
    return np.array(out)


class MeasuredFom:
    """Measurement-only oracle: pulse in, :class:`FomReport` out.

    This is the only channel through which the calibration objective learns
    about the sample; it exposes no propagator and no system parameters.
    """

    __slots__ = ("_measure", "calls")

    def __init__(self, sim: SpamSimulator, rng=None):
        gen = None if rng is None else np.random.default_rng(rng)
        self._measure = lambda pulse: sim.measured_fj(pulse, gen)
        self.calls = 0

    def __call__(self, pulse: ShapedPulse) -> FomReport:
        self.calls += 1
        return self._measure(pulse)


def calibration_objective(base: ShapedPulse, subset: Sequence[str], measure: Callable[[ShapedPulse], FomReport]):
    """``1 - F_J`` (raw, relative to its maximum) as a function of unit coordinates."""
    subset = tuple(subset)

    def objective(u):
        rep = measure(calibration_from_unit(u, subset).apply(base))
        return rep.f_j_max - rep.f_j_raw, {"f_j_raw": rep.f_j_raw, "f_j_normalized": rep.f_j_normalized}

    return objective


def closed_loop_calibrate(
    base: ShapedPulse,
    system: SystemParams,
    subset: Sequence[str],
    cfg: NelderMeadConfig = NelderMeadConfig(initial_simplex_scale=0.01, max_evals=1700, f_tol=1e-10, x_tol=1e-6),
    spam: SpamConfig = SpamConfig(),
    rng=None,
    record_reference: bool = True,
) -> tuple[CalibrationVector, OptimizationTrace]:
    """Calibrate scalar pulse parameters against the simulated measured ``F_J``.

    Only the measured figure of merit drives the search. ``F_sm`` of each
    evaluated pulse and the SPAM-free score are logged for reporting only.
    """
    subset = parse_subset(subset)
    measure = MeasuredFom(spam_simulator(system, spam), rng)
    objective = calibration_objective(base, subset, measure)

    def reported(u):
        value, info = objective(u)
        if record_reference:
            perf = fj_of_unitary(pulse_propagator(system, calibration_from_unit(u, subset).apply(base)))
            info.update(f_sm_ref=perf.f_sm, f_j_perf_normalized=perf.f_j_normalized)
        return value, info

    trace = OptimizationTrace([f"u_{k}" for k in subset])
    u0 = calibration_to_unit(CalibrationVector(), subset)
    u_best, _, trace = nelder_mead(reported, u0, cfg, trace)
    return calibration_from_unit(u_best, subset), trace
