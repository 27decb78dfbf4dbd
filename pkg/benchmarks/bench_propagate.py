"""Compare the compiled and numpy propagation kernels.

Usage: python benchmarks/bench_propagate.py [--steps 2000 5000] [--repeat 20]

Both kernels receive the same Hamiltonian stack: a shaped microwave pulse on
the nominal system, sampled on its default grid. Reported are the median
wall time per propagator and the deviation from a per-step ``scipy`` product.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from nvqoc import _fallback
from nvqoc.pulses import DcrabBasis, ShapedPulse, compile_to_channel
from nvqoc.quantum import TimeGrid, sample_hamiltonians, unitarity_residual
from nvqoc.system import TAU, SystemParams, TransitionId, hamiltonian_sampler, transition_frequency

try:
    from nvqoc import _kernels
except ImportError:
    _kernels = None


def stack(n_steps: int) -> tuple[np.ndarray, float]:
    p = SystemParams.nominal()
    basis = DcrabBasis(((0.8, 1.1, TAU * 1.7 / p.t_hf), (-0.5, 0.3, TAU * 4.2 / p.t_hf)), 0, p.t_hf)
    pulse = ShapedPulse(TAU * 2.0, transition_frequency(p, TransitionId.E01_11), 0.2, p.t_hf, modulation=(basis,))
    grid = TimeGrid(pulse.duration, n_steps)
    hams = sample_hamiltonians(hamiltonian_sampler(p, [compile_to_channel(pulse, p)]), grid.midpoints())
    return np.ascontiguousarray(hams), grid.step


def reference(hams: np.ndarray, dt: float) -> np.ndarray:
    from scipy.linalg import expm

    u = np.eye(4, dtype=complex)
    for h in hams:
        u = expm(-1j * h * dt) @ u
    return u


def timeit(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[500, 2000, 10000])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-reference", action="store_true", help="skip the slow scipy accuracy check")
    args = ap.parse_args(argv)

    kernels = [("python", _fallback)] + ([("compiled", _kernels)] if _kernels is not None else [])
    print(f"{'steps':>7} {'backend':>9} {'median ms':>10} {'us/step':>8} {'max |U-U_ref|':>14} {'unitarity':>10}")
    for n in args.steps:
        hams, dt = stack(n)
        ref = None if args.no_reference else reference(hams, dt)
        base = None
        for name, mod in kernels:
            t = timeit(lambda: mod.propagate_steps(hams, dt), args.repeat)
            u = mod.propagate_steps(hams, dt)
            err = float("nan") if ref is None else np.abs(u - ref).max()
            print(f"{n:>7} {name:>9} {t * 1e3:>10.3f} {t / n * 1e6:>8.3f} {err:>14.2e} {unitarity_residual(u):>10.1e}")
            base = t if base is None else base
        if len(kernels) == 2:
            print(f"{'':>7} {'speedup':>9} {base / t:>10.2f}x")
    if _kernels is None:
        print("compiled extension not built; only the numpy kernel was measured")


if __name__ == "__main__":
    main()
