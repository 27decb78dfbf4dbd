"""Command line interface: ``nvqoc <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from nvqoc.optimize import NelderMeadConfig, parse_subset, subset_label
from nvqoc.quantum import BACKEND
from nvqoc.system import TAU
from nvqoc.workbench import (
    ConfigError,
    WorkbenchConfig,
    emit_plot_data,
    ensemble_from_dict,
    ensemble_to_dict,
    generate_ensemble,
    load_config,
    load_pulse,
    read_json,
    run_closed_loop_campaign,
    run_open_loop,
    run_spam_report,
    write_json,
)

log = logging.getLogger("nvqoc")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvqoc", description="NV-13C gate benchmarking and optimal control workbench")
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", default=".", help="output directory (default: current directory)")
    ap.add_argument("--threads", type=int, help="worker processes for campaigns (default: available cores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("spam-report", help="SPAM fidelities, readout contrast and spectrum")

    ol = sub.add_parser("open-loop", help="open-loop dCRAB pulse search")
    ol.add_argument("--n-super", type=int)
    ol.add_argument("--n-basis", type=int)
    ol.add_argument("--max-evals", type=int, help="Nelder-Mead evaluations per super-iteration")

    en = sub.add_parser("ensemble", help="draw perturbed sample systems")
    en.add_argument("--n-samples", type=int)
    en.add_argument("--sigma", type=float, help="relative standard deviation")

    cl = sub.add_parser("closed-loop", help="closed-loop calibration campaign")
    cl.add_argument("--pulse", required=True, help="pulse JSON from open-loop")
    cl.add_argument("--ensemble", required=True, help="ensemble JSON")
    cl.add_argument("--subset", action="append", help="calibration subset, e.g. 'Ω,T,ω' or 'Omega,T,omega' (repeatable)")
    cl.add_argument("--max-evals", type=int)
    cl.add_argument("--samples", type=int, help="use only the first N samples")

    pd = sub.add_parser("plot-data", help="plot-ready CSVs from result files")
    pd.add_argument("--pulse", help="pulse JSON")
    pd.add_argument("--reference-pulse", help="second pulse for comparison (e.g. open-loop)")
    pd.add_argument("--trace", help="trace CSV")
    pd.add_argument("--campaign", help="campaign CSV")
    return ap


def _config(args) -> WorkbenchConfig:
    cfg = load_config(args.config) if args.config else WorkbenchConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, dcrab=replace(cfg.dcrab, seed=args.seed),
                      ensemble=replace(cfg.ensemble, seed=args.seed))
    return cfg


def _print(data: dict) -> None:
    print(json.dumps(data, indent=2, ensure_ascii=False, default=str))


def cmd_spam_report(args, cfg: WorkbenchConfig, out: Path) -> None:
    report = run_spam_report(cfg.system, cfg.spam)
    write_json(out / "spam_report.json", report)
    _print({k: v for k, v in report.items() if k != "system"})


def cmd_open_loop(args, cfg: WorkbenchConfig, out: Path) -> None:
    dc = cfg.dcrab
    if args.n_super is not None:
        dc = replace(dc, n_super=args.n_super)
    if args.n_basis is not None:
        dc = replace(dc, n_basis=args.n_basis)
    if args.max_evals is not None:
        dc = replace(dc, nm=replace(dc.nm, max_evals=args.max_evals))
    t0 = time.perf_counter()
    res = run_open_loop(cfg.system, dc, out)
    res["summary"]["runtime_s"] = time.perf_counter() - t0
    _print(res["summary"])


def cmd_ensemble(args, cfg: WorkbenchConfig, out: Path) -> None:
    spec = cfg.ensemble
    if args.n_samples is not None:
        spec = replace(spec, n_samples=args.n_samples)
    if args.sigma is not None:
        spec = replace(spec, relative_sigma=args.sigma)
    samples = generate_ensemble(spec, cfg.system)
    write_json(out / "ensemble.json", ensemble_to_dict(samples, spec))
    _print({"ensemble_file": str(out / "ensemble.json"), "n_samples": len(samples),
            "A_zz_MHz": [s.A_zz / TAU for s in samples], "A_zx_MHz": [s.A_zx / TAU for s in samples]})


def cmd_closed_loop(args, cfg: WorkbenchConfig, out: Path) -> None:
    pulse, _ = load_pulse(args.pulse)
    samples = ensemble_from_dict(read_json(args.ensemble))
    if args.samples is not None:
        samples = samples[: args.samples]
    settings = cfg.closed_loop
    if args.max_evals is not None:
        settings = replace(settings, max_evals=args.max_evals)
    subsets = [parse_subset(s) for s in args.subset] if args.subset else list(settings.subsets)
    t0 = time.perf_counter()
    result = run_closed_loop_campaign(pulse, samples, subsets, settings, cfg.spam, cfg.seed, args.threads, out)
    summary = result.summary()
    summary["runtime_s"] = time.perf_counter() - t0
    _print(summary)


def cmd_plot_data(args, cfg: WorkbenchConfig, out: Path) -> None:
    if not (args.pulse or args.trace or args.campaign):
        raise ConfigError("plot-data needs at least one of --pulse, --trace, --campaign")
    files = emit_plot_data(out, args.pulse, args.trace, args.campaign, args.reference_pulse)
    _print({"written": files})


COMMANDS = {
    "spam-report": cmd_spam_report,
    "open-loop": cmd_open_loop,
    "ensemble": cmd_ensemble,
    "closed-loop": cmd_closed_loop,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.info("propagation backend: %s", BACKEND)
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"nvqoc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
