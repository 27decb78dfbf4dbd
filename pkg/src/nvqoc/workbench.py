"""Campaign orchestration: configuration, ensembles, runners and plot data.

Files: configuration, ensembles and pulses are JSON with a ``format_version``
field and linear MHz / us / Gauss units. Results are CSV with a JSON summary
sidecar.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from nvqoc.metrics import RHO1, RHO2, readout_contrast
from nvqoc.optimize import (
    CALIBRATION_FIELDS,
    DEFAULT_SUBSETS,
    DcrabConfig,
    NelderMeadConfig,
    OptimizationTrace,
    closed_loop_calibrate,
    dcrab_open_loop,
    guess_pulse,
    parse_subset,
    reference_fidelity,
    subset_label,
)
from nvqoc.pulses import (
    ShapedPulse,
    envelope_value,
    shaped_amplitude,
    shaped_pulse_from_dict,
    shaped_pulse_to_dict,
)
from nvqoc.quantum import uhlmann_fidelity
from nvqoc.spam import PHASE_TUPLES, SpamConfig, SpamSimulator
from nvqoc.system import TAU, SystemParams, TransitionId, transition_frequency

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid or missing configuration / input file."""


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class EnsembleSpec:
    n_samples: int = 20
    relative_sigma: float = 0.05
    perturbed_fields: tuple[str, ...] = ("A_zx", "A_zz")
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.relative_sigma < 0:
            raise ConfigError("relative_sigma must be >= 0")
        bad = set(self.perturbed_fields) - {"A_zx", "A_zz", "A_zy"}
        if bad:
            raise ConfigError(f"cannot perturb {sorted(bad)}")


@dataclass(frozen=True)
class ClosedLoopSettings:
    subsets: tuple[tuple[str, ...], ...] = DEFAULT_SUBSETS
    max_evals: int = 1700
    simplex_scale: float = 0.01
    f_tol: float = 1e-10
    x_tol: float = 1e-6

    def nelder_mead(self) -> NelderMeadConfig:
        return NelderMeadConfig(self.simplex_scale, self.max_evals, self.f_tol, self.x_tol)


@dataclass(frozen=True)
class WorkbenchConfig:
    system: SystemParams = field(default_factory=SystemParams)
    spam: SpamConfig = field(default_factory=SpamConfig)
    dcrab: DcrabConfig = field(default_factory=DcrabConfig)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    closed_loop: ClosedLoopSettings = field(default_factory=ClosedLoopSettings)
    seed: int = 0

    def to_dict(self) -> dict:
        d = self.dcrab
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "system": self.system.to_dict(),
            "spam": self.spam.to_dict(),
            "dcrab": {
                "n_super": d.n_super,
                "n_basis": d.n_basis,
                "seed": d.seed,
                "omega0_MHz": d.omega0 / TAU,
                "guess_duration": d.guess_duration,
                "max_evals_per_super_iteration": d.nm.max_evals,
                "simplex_scale": d.nm.initial_simplex_scale,
            },
            "ensemble": {**asdict(self.ensemble), "perturbed_fields": list(self.ensemble.perturbed_fields)},
            "closed_loop": {
                "subsets": [subset_label(s) for s in self.closed_loop.subsets],
                "max_evals": self.closed_loop.max_evals,
                "simplex_scale": self.closed_loop.simplex_scale,
            },
        }


def config_from_dict(d: dict) -> WorkbenchConfig:
    if d.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {d.get('format_version')!r}")
    try:
        base = WorkbenchConfig()
        system = SystemParams.from_dict(d["system"]) if "system" in d else base.system
        spam = SpamConfig.from_dict(d["spam"]) if "spam" in d else base.spam
        dc = d.get("dcrab", {})
        nm = base.dcrab.nm
        dcrab = DcrabConfig(
            n_super=int(dc.get("n_super", base.dcrab.n_super)),
            n_basis=int(dc.get("n_basis", base.dcrab.n_basis)),
            seed=int(dc.get("seed", base.dcrab.seed)),
            omega0=float(dc.get("omega0_MHz", base.dcrab.omega0 / TAU)) * TAU,
            guess_duration=float(dc.get("guess_duration", base.dcrab.guess_duration)),
            nm=NelderMeadConfig(
                dc.get("simplex_scale", nm.initial_simplex_scale),
                int(dc.get("max_evals_per_super_iteration", nm.max_evals)),
                nm.f_tol,
                nm.x_tol,
            ),
        )
        en = d.get("ensemble", {})
        ensemble = EnsembleSpec(
            n_samples=int(en.get("n_samples", 20)),
            relative_sigma=float(en.get("relative_sigma", 0.05)),
            perturbed_fields=tuple(en.get("perturbed_fields", ("A_zx", "A_zz"))),
            seed=int(en.get("seed", 0)),
        )
        cl = d.get("closed_loop", {})
        closed = ClosedLoopSettings(
            subsets=tuple(parse_subset(s) for s in cl.get("subsets", [subset_label(s) for s in DEFAULT_SUBSETS])),
            max_evals=int(cl.get("max_evals", 1700)),
            simplex_scale=float(cl.get("simplex_scale", 0.01)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return WorkbenchConfig(system, spam, dcrab, ensemble, closed, int(d.get("seed", 0)))


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=False, ensure_ascii=False) + "\n")


def load_config(path) -> WorkbenchConfig:
    return config_from_dict(read_json(path))


# -------------------------------------------------------------- ensemble


def generate_ensemble(spec: EnsembleSpec, nominal: SystemParams = SystemParams()) -> list[SystemParams]:
    """I.i.d. Gaussian perturbations of the named couplings about nominal.

    A draw with a negative coupling is non-physical; it is redrawn and logged.
    """
    rng = np.random.default_rng(spec.seed)
    samples = []
    for i in range(spec.n_samples):
        changes = {}
        for name in spec.perturbed_fields:
            centre = getattr(nominal, name)
            while True:
                value = centre * (1.0 + spec.relative_sigma * rng.standard_normal())
                if value >= 0 or centre < 0:
                    break
                log.warning("sample %d: non-physical %s = %.4g MHz redrawn", i, name, value / TAU)
            changes[name] = value
        samples.append(nominal.replace(**changes))
    return samples


def ensemble_to_dict(samples: Sequence[SystemParams], spec: Optional[EnsembleSpec] = None) -> dict:
    out = {"format_version": FORMAT_VERSION, "kind": "ensemble", "samples": [s.to_dict() for s in samples]}
    if spec is not None:
        out["spec"] = {**asdict(spec), "perturbed_fields": list(spec.perturbed_fields)}
    return out


def ensemble_from_dict(d: dict) -> list[SystemParams]:
    if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "ensemble":
        raise ConfigError("not an ensemble file (format_version/kind mismatch)")
    return [SystemParams.from_dict(s) for s in d["samples"]]


def load_pulse(path) -> tuple[ShapedPulse, dict]:
    d = read_json(path)
    try:
        return shaped_pulse_from_dict(d), d.get("metadata", {})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ----------------------------------------------------------- SPAM report


def run_spam_report(p: SystemParams, cfg: SpamConfig = SpamConfig()) -> dict:
    """Preparation fidelities, readout contrast and spectrum of one instance."""
    sim = SpamSimulator(p, cfg)
    ideal = SpamSimulator(p, cfg, ideal=True)
    variants = [uhlmann_fidelity(sim.prepare_rho1_variant(s), ideal.prepare_rho1_variant(s)) for s in PHASE_TUPLES]
    pi = sim.unitary("readout_pi")
    return {
        "format_version": FORMAT_VERSION,
        "kind": "spam_report",
        "rho1_average_fidelity": uhlmann_fidelity(sim.prepare_rho1_average(), RHO1),
        "rho1_variant_fidelities": variants,
        "rho1_average_diagonal": [float(x) for x in np.real(np.diag(sim.prepare_rho1_average()))],
        "rho2_fidelity": uhlmann_fidelity(sim.prepare_rho2(), RHO2),
        "readout_contrast": readout_contrast(pi),
        "readout_pi_f_sm": sim.readout_pi_fidelity(),
        "t_hf_us": p.t_hf,
        "rf_duration_us": cfg.rf_duration(p),
        "readout_pi_duration_us": cfg.readout_pi_duration(p),
        "omega_n_MHz": p.omega_n / TAU,
        "dressed_splitting_MHz": p.dressed_splitting / TAU,
        "transition_frequencies_MHz": {t.name: transition_frequency(p, t) / TAU for t in TransitionId},
        "system": p.to_dict(),
    }


# -------------------------------------------------------------- open loop


def run_open_loop(p: SystemParams, cfg: DcrabConfig, out_dir=None) -> dict:
    """Open-loop dCRAB search; persists ``pulse.json`` and ``open_loop_trace.csv``."""
    pulse, trace = dcrab_open_loop(p, cfg)
    f_sm = reference_fidelity(p, pulse)
    guess = guess_pulse(p, cfg)
    metadata = {
        "source": "open_loop",
        "seed": cfg.seed,
        "n_super": cfg.n_super,
        "n_basis": cfg.n_basis,
        "f_sm": f_sm,
        "evaluations": len(trace),
        "guess_carrier_MHz": guess.carrier / TAU,
        "guess_duration_us": guess.duration,
        "guess_phase": guess.phase,
        "t_hf_us": p.t_hf,
        "system": p.to_dict(),
    }
    summary = {"f_sm": f_sm, "duration_us": pulse.duration, "t_hf_us": p.t_hf, "evaluations": len(trace)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "pulse.json", shaped_pulse_to_dict(pulse, metadata))
        trace.to_csv(out / "open_loop_trace.csv")
        summary["pulse_file"] = str(out / "pulse.json")
        summary["trace_file"] = str(out / "open_loop_trace.csv")
    return {"pulse": pulse, "trace": trace, "metadata": metadata, "summary": summary}


# ------------------------------------------------------------ closed loop

CAMPAIGN_COLUMNS = (
    "sample",
    "subset",
    "A_zz_MHz",
    "A_zx_MHz",
    "uncalibrated_f_sm",
    "calibrated_f_sm",
    "f_j_raw",
    "f_j_normalized",
    "evaluations",
    "amplitude_scale",
    "duration_scale",
    "carrier_shift_MHz",
    "phase_shift",
)


@dataclass
class CampaignResult:
    rows: list[dict]
    traces: dict = field(default_factory=dict)

    def subsets(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["subset"] not in seen:
                seen.append(r["subset"])
        return seen

    def summary(self) -> dict:
        out = {"format_version": FORMAT_VERSION, "kind": "closed_loop_summary", "subsets": {}}
        unc = {r["sample"]: 1.0 - r["uncalibrated_f_sm"] for r in self.rows}
        if unc:
            out["uncalibrated_infidelity"] = _stats(list(unc.values()))
        for s in self.subsets():
            inf = [1.0 - r["calibrated_f_sm"] for r in self.rows if r["subset"] == s]
            evals = [r["evaluations"] for r in self.rows if r["subset"] == s]
            entry = {"calibrated_infidelity": _stats(inf), "evaluations": _stats(evals)}
            if unc:
                entry["improvement_factor"] = out["uncalibrated_infidelity"]["mean"] / max(entry["calibrated_infidelity"]["mean"], 1e-300)
            out["subsets"][s] = entry
        return out

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "campaign.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CAMPAIGN_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r[k] for k in CAMPAIGN_COLUMNS})
        write_json(out / "campaign_summary.json", self.summary())
        if self.traces:
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            for (sample, label), trace in self.traces.items():
                trace.to_csv(tdir / trace_file_name(sample, label))


def trace_file_name(sample: int, label: str) -> str:
    tag = label.replace("Ω", "Omega").replace("ω", "omega").replace("φ", "phi").replace(",", "")
    return f"sample{sample:02d}_{tag}.csv"


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"min": float(v.min()), "mean": float(v.mean()), "max": float(v.max()),
            "stderr": float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0}


def _calibration_task(args) -> tuple[dict, OptimizationTrace]:
    sample, system, base, subset, nm, spam, seed = args
    rng = None if spam.shots is None else np.random.default_rng(seed)
    cal, trace = closed_loop_calibrate(base, system, subset, nm, spam, rng)
    best = int(np.argmin(trace.values()))
    rec = trace.records[best]
    row = {
        "sample": sample,
        "subset": subset_label(subset),
        "A_zz_MHz": system.A_zz / TAU,
        "A_zx_MHz": system.A_zx / TAU,
        "uncalibrated_f_sm": None,
        "calibrated_f_sm": reference_fidelity(system, cal.apply(base)),
        "f_j_raw": rec.info["f_j_raw"],
        "f_j_normalized": rec.info["f_j_normalized"],
        "evaluations": len(trace),
        **cal.to_dict(),
    }
    return row, trace


def _uncalibrated_task(args) -> float:
    system, base = args
    return reference_fidelity(system, base)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_closed_loop_campaign(
    base: ShapedPulse,
    samples: Sequence[SystemParams],
    subsets: Sequence[Sequence[str]] = DEFAULT_SUBSETS,
    settings: ClosedLoopSettings = ClosedLoopSettings(),
    spam: SpamConfig = SpamConfig(),
    seed: int = 0,
    threads: Optional[int] = None,
    out_dir=None,
) -> CampaignResult:
    """Calibrate ``base`` on every (sample, subset) pair.

    Tasks are independent and deterministic; each gets its own seed stream,
    so results do not depend on the number of workers.
    """
    subsets = [parse_subset(s) for s in subsets]
    nm = settings.nelder_mead()
    streams = np.random.SeedSequence(seed).spawn(len(samples) * len(subsets))
    tasks = [
        (i, system, base, subset, nm, spam, streams[i * len(subsets) + j])
        for i, system in enumerate(samples)
        for j, subset in enumerate(subsets)
    ]
    workers = default_workers() if threads is None else max(1, int(threads))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            uncal = list(pool.map(_uncalibrated_task, [(s, base) for s in samples]))
            results = list(pool.map(_calibration_task, tasks))
    else:
        uncal = [_uncalibrated_task((s, base)) for s in samples]
        results = [_calibration_task(t) for t in tasks]
    rows, traces = [], {}
    for row, trace in results:
        row["uncalibrated_f_sm"] = uncal[row["sample"]]
        rows.append(row)
        traces[(row["sample"], row["subset"])] = trace
    result = CampaignResult(rows, traces)
    if out_dir is not None:
        result.write(out_dir)
    return result


# ------------------------------------------------------------- plot data

PULSE_SAMPLES = 1000


def pulse_shape_rows(pulse: ShapedPulse, n: int = PULSE_SAMPLES) -> list[dict]:
    ts = np.linspace(0.0, pulse.duration, n)
    amp = shaped_amplitude(pulse, ts)
    env = envelope_value(pulse.envelope, pulse.duration, ts)
    mod = pulse.modulation_at(ts)
    return [
        {"t_us": t, "amplitude_MHz": a / TAU, "envelope": g, "modulation": f}
        for t, a, g, f in zip(ts, amp, env, mod)
    ]


def _write_rows(path, columns, rows, comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})


def _read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def emit_plot_data(out_dir, pulse_file=None, trace_file=None, campaign_file=None, reference_pulse_file=None) -> list[str]:
    """Plot-ready CSVs: pulse shape, optimisation trace and per-subset box data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if pulse_file is not None:
        pulse, _ = load_pulse(pulse_file)
        rows = pulse_shape_rows(pulse)
        cols = ["t_us", "amplitude_MHz", "envelope", "modulation"]
        if reference_pulse_file is not None:
            ref, _ = load_pulse(reference_pulse_file)
            ref_amp = shaped_amplitude(ref, np.clip([r["t_us"] for r in rows], 0, ref.duration))
            for r, a in zip(rows, ref_amp):
                r["reference_amplitude_MHz"] = a / TAU
            cols.append("reference_amplitude_MHz")
        _write_rows(out / "pulse_shape.csv", cols, rows,
                    "t_us: time; amplitude_MHz: Omega(t)/2pi after clipping; envelope: g(t); modulation: f(t)")
        written.append(str(out / "pulse_shape.csv"))
    if trace_file is not None:
        src = _read_csv(trace_file)
        rows = []
        best = math.inf
        for r in src:
            fom = float(r["fom"])
            best = min(best, fom)
            row = {"eval": int(r["eval"]), "fom": fom, "best_so_far": best,
                   "reference_infidelity": _float_or_nan(r.get("f_sm_ref"), lambda x: 1.0 - x),
                   "perfect_infidelity": _float_or_nan(r.get("f_j_perf_normalized"), lambda x: 1.0 - x),
                   "measured_infidelity": _float_or_nan(r.get("f_j_normalized"), lambda x: 1.0 - x)}
            rows.append(row)
        _write_rows(out / "trace.csv", list(rows[0]) if rows else ["eval", "fom", "best_so_far"], rows,
                    "fom: optimised objective; best_so_far: running minimum; *_infidelity: 1 - F for reference F_sm, SPAM-free and measured normalised F_J")
        written.append(str(out / "trace.csv"))
    if campaign_file is not None:
        src = _read_csv(campaign_file)
        rows = []
        for r in src:
            rows.append({"subset": r["subset"], "sample": int(r["sample"]),
                         "uncalibrated_infidelity": 1.0 - float(r["uncalibrated_f_sm"]),
                         "calibrated_infidelity": 1.0 - float(r["calibrated_f_sm"])})
        labels = list(dict.fromkeys(r["subset"] for r in rows))
        stats = []
        unc = list({r["sample"]: r["uncalibrated_infidelity"] for r in rows}.values())
        for label, vals in [("uncalibrated", unc)] + [(s, [r["calibrated_infidelity"] for r in rows if r["subset"] == s]) for s in labels]:
            st = _stats(vals)
            stats.append({"subset": label, **st, "n": len(vals)})
        _write_rows(out / "box.csv", ["subset", "sample", "uncalibrated_infidelity", "calibrated_infidelity"], rows,
                    "per-sample reference infidelity 1 - F_sm before and after calibration, one row per (subset, sample)")
        _write_rows(out / "box_summary.csv", ["subset", "min", "mean", "max", "stderr", "n"], stats,
                    "summary of calibrated (and uncalibrated) reference infidelity per subset")
        written += [str(out / "box.csv"), str(out / "box_summary.csv")]
    return written


def _float_or_nan(value, fn) -> float:
    if value in (None, ""):
        return math.nan
    return fn(float(value))
