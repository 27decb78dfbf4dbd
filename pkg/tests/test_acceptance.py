"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one ``[criterion N] PASS|FAIL ...`` line; the lines are
repeated in an "acceptance criteria" section of the terminal summary. Criteria 5, 6 and the
trace part of 8 share one open-loop search and one closed-loop campaign via
module-scoped fixtures.
"""

import math
import time

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import spearmanr

from conftest import ACCEPTANCE_LINES, random_hermitian
from nvqoc.metrics import RHO1, RHO1_DIAGONAL, RHO1_SWAPPED_DIAGONAL, RHO2, TARGET_GATE, fj_of_unitary, readout_contrast
from nvqoc.optimize import DcrabConfig, closed_loop_calibrate, dcrab_open_loop, reference_fidelity
from nvqoc.pulses import ConstantPulse, pulse_propagator
from nvqoc.quantum import apply_channel, projector, uhlmann_fidelity, unitarity_residual
from nvqoc.spam import PHASE_TUPLES, MeasurementTriple, SpamConfig, SpamSimulator, reconstruct_diagonal, rotation
from nvqoc.system import TAU, SystemParams, TransitionId, drift_frequencies
from nvqoc.workbench import ClosedLoopSettings, EnsembleSpec, generate_ensemble, run_closed_loop_campaign

P = SystemParams.nominal()
OPEN_LOOP_SEEDS = range(5)
CALIBRATION_SUBSET = ("amplitude_scale", "duration_scale", "carrier_shift")
ENSEMBLE = EnsembleSpec(n_samples=20, relative_sigma=0.05, seed=2026)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def open_loop():
    """Seeds are tried in order until one reaches the target; all tried are reported."""
    results = []
    t0 = time.perf_counter()
    for seed in OPEN_LOOP_SEEDS:
        pulse, trace = dcrab_open_loop(P, DcrabConfig(seed=seed))
        results.append((seed, pulse, reference_fidelity(P, pulse), len(trace)))
        if results[-1][2] >= 0.999:
            break
    runtime = time.perf_counter() - t0
    best = max(results, key=lambda r: r[2])
    return {"results": results, "best": best, "runtime": runtime}


@pytest.fixture(scope="module")
def campaign(open_loop):
    pulse = open_loop["best"][1]
    samples = generate_ensemble(ENSEMBLE)
    t0 = time.perf_counter()
    result = run_closed_loop_campaign(pulse, samples, [CALIBRATION_SUBSET], ClosedLoopSettings(max_evals=1700), seed=7)
    return {"result": result, "samples": samples, "runtime": time.perf_counter() - t0}


# --------------------------------------------------------------- criterion 1


def test_criterion_1_spam_reproduction():
    t0 = time.perf_counter()
    sim = SpamSimulator(P)
    f1 = uhlmann_fidelity(sim.prepare_rho1_average(), RHO1)
    f2 = uhlmann_fidelity(sim.prepare_rho2(), RHO2)
    contrast = readout_contrast(sim.unitary("readout_pi"))
    f_pi = sim.readout_pi_fidelity()
    runtime = time.perf_counter() - t0
    ok = f1 >= 0.9999 and f2 >= 0.999 and contrast >= 0.999 and 0.988 <= f_pi <= 0.998 and runtime < 60
    report(1, ok, f"<rho1~> {f1:.6%}, rho2 {f2:.4%}, contrast {contrast:.4%}, readout-pi F_sm {f_pi:.3%}, {runtime:.1f} s")
    assert f1 >= 0.9999
    assert f2 >= 0.999
    assert contrast >= 0.999
    assert 0.988 <= f_pi <= 0.998
    assert runtime < 60


# --------------------------------------------------------------- criterion 2


def test_criterion_2_constants():
    h = np.diag(drift_frequencies(P)).astype(complex)[2:, 2:]
    h += np.array([[-P.A_zz, -P.A_zx], [-P.A_zx, P.A_zz]]) / 2
    w = np.linalg.eigvalsh(h)
    dense = w[1] - w[0]
    closed = math.sqrt((P.omega_n + P.A_zz) ** 2 + P.A_zx**2)
    ok = (
        abs(P.t_hf / 0.8673 - 1) <= 0.01
        and abs(P.omega_n / (TAU * 0.642) - 1) <= 1e-3
        and abs(closed / (TAU * 2.9426) - 1) <= 1e-3
        and abs(dense / closed - 1) <= 1e-3
    )
    report(2, ok, f"T_hf {P.t_hf:.5f} us, omega_n/2pi {P.omega_n / TAU:.5f} MHz, "
                  f"splitting/2pi {closed / TAU:.5f} MHz (dense {dense / TAU:.5f})")
    assert P.t_hf == pytest.approx(0.8673, rel=0.01)
    assert P.omega_n == pytest.approx(TAU * 0.642, rel=1e-3)
    assert closed == pytest.approx(TAU * 2.9426, rel=1e-3)
    assert dense == pytest.approx(closed, rel=1e-3)
    assert P.dressed_splitting == pytest.approx(closed, rel=1e-12)


# --------------------------------------------------------------- criterion 3


def test_criterion_3_reconstruction_identity():
    rng = np.random.default_rng(3)
    d = rng.dirichlet(np.ones(4), size=100_000)
    worst = worst_sum = 0.0
    for row in d:
        rec = reconstruct_diagonal(MeasurementTriple(row[0] + row[1], row[0] + row[2], row[0] + row[3]))
        worst = max(worst, float(np.max(np.abs(rec - row))))
        worst_sum = max(worst_sum, abs(rec.sum() - 1.0))
    # arbitrary triples: sum is 1 identically
    m = rng.uniform(0, 1, size=(1000, 3))
    worst_any = max(abs(reconstruct_diagonal(MeasurementTriple(*x)).sum() - 1) for x in m)
    ok = worst <= 1e-12 and worst_sum <= 1e-12 and worst_any <= 1e-12
    report(3, ok, f"max round-trip error {worst:.1e}, max |sum-1| {max(worst_sum, worst_any):.1e} over 1e5 vectors")
    assert worst <= 1e-12
    assert worst_sum <= 1e-12
    assert worst_any <= 1e-12


# --------------------------------------------------------------- criterion 4


def test_criterion_4_linearity_and_phase_averaging():
    sim = SpamSimulator(P)
    rng = np.random.default_rng(4)
    gap = 0.0
    for _ in range(20):
        u = expm(-1j * random_hermitian(rng, scale=0.3)) @ TARGET_GATE
        scores = sim.variant_scores(u)
        mean_state = apply_channel(u, sim.prepare_rho1_average())
        of_mean = float(RHO1_SWAPPED_DIAGONAL @ reconstruct_diagonal(sim.readout_triple(mean_state)))
        gap = max(gap, abs(np.mean(scores) - of_mean))

    # random phases instead of the {0, pi}^2 cycle, ideal rotations
    n = 100_000
    phi = rng.uniform(0, TAU, size=(n, 2))
    angles = SpamConfig().angles
    nuc = np.array([rotation(angles.theta1, p)[:, 0] for p in phi[:, 0]])  # R_n |0>
    ele = np.array([rotation(angles.theta2, p)[:, 0] for p in phi[:, 1]])  # R_e |0>
    psi = np.einsum("ni,nj->nij", ele, nuc).reshape(n, 4)
    avg = np.einsum("ni,nj->ij", psi, psi.conj()) / n
    diag_err = float(np.max(np.abs(np.real(np.diag(avg)) - RHO1_DIAGONAL)))
    off = float(np.max(np.abs(avg - np.diag(np.diag(avg)))))
    ok = gap <= 1e-12 and diag_err <= 0.01
    report(4, ok, f"mean-of-scores vs score-of-mean {gap:.1e}; random-phase diag error {diag_err:.2e} "
                  f"(max coherence {off:.1e}) over 1e5 draws")
    assert gap <= 1e-12
    assert diag_err <= 0.01


# --------------------------------------------------------------- criterion 5


@pytest.mark.slow
def test_criterion_5_open_loop(open_loop):
    seed, pulse, f_sm, evals = open_loop["best"]
    tried = ", ".join(f"seed {s}: {f:.4%}" for s, _, f, _ in open_loop["results"])
    dev = abs(pulse.duration / P.t_hf - 1)
    runtime = open_loop["runtime"]
    ok = f_sm >= 0.999 and dev <= 0.2 and runtime <= 1800
    report(5, ok, f"best F_sm {f_sm:.4%} (seed {seed}, {evals} evals), T = {pulse.duration:.4f} us "
                  f"({dev:.1%} from T_hf), {runtime / 60:.1f} min [{tried}]")
    assert f_sm >= 0.999
    assert dev <= 0.2
    assert runtime <= 1800


# --------------------------------------------------------------- criterion 6


@pytest.mark.slow
def test_criterion_6_closed_loop(campaign):
    rows = campaign["result"].rows
    unc = np.array([1 - r["uncalibrated_f_sm"] for r in rows])
    cal = np.array([1 - r["calibrated_f_sm"] for r in rows])
    evals = max(r["evaluations"] for r in rows)
    factor = unc.mean() / cal.mean()
    mean_f = 1 - cal.mean()
    runtime = campaign["runtime"]
    ok = factor >= 5 and mean_f >= 0.998 and evals <= 1700 and runtime <= 7200
    report(6, ok, f"mean infidelity {unc.mean():.2e} -> {cal.mean():.2e} ({factor:.1f}x), mean F_sm {mean_f:.4%}, "
                  f"max evals {evals}, {runtime / 60:.1f} min for {len(rows)} samples")
    assert factor >= 5
    assert mean_f >= 0.998
    assert evals <= 1700
    assert runtime <= 7200


# --------------------------------------------------------------- criterion 7


def test_criterion_7_measurement_economy():
    sim = SpamSimulator(P)
    u = expm(-1j * random_hermitian(np.random.default_rng(7), scale=0.1)) @ TARGET_GATE
    sim.measured_fj(u)
    preps, settings = sim.preparation_count(), sim.measurement_setting_count()
    ok = preps == 2 and settings == 4
    report(7, ok, f"{preps} preparation recipes, {settings} measurement settings per F_J value")
    assert preps == 2
    assert settings == 4


# --------------------------------------------------------------- criterion 8


def test_criterion_8a_rank_correlation():
    rng = np.random.default_rng(8)
    fj, fsm = [], []
    for _ in range(1000):
        h = random_hermitian(rng)
        h /= np.max(np.abs(np.linalg.eigvalsh(h)))
        eps = 0.1 * (1.0 - rng.uniform())  # (0, 0.1]
        rep = fj_of_unitary(TARGET_GATE @ expm(-1j * eps * h))
        fj.append(rep.f_j_normalized)
        fsm.append(rep.f_sm)
    rho = spearmanr(fj, fsm).statistic
    report(8, rho > 0.9, f"(a) Spearman rank correlation F_J vs F_sm = {rho:.4f} over 1000 unitaries")
    assert rho > 0.9


@pytest.mark.slow
def test_criterion_8b_trace_agreement(open_loop):
    # representative trace: first ensemble sample, calibrated on {Ω, T, ω}
    sample = generate_ensemble(ENSEMBLE)[0]
    _, trace = closed_loop_calibrate(open_loop["best"][1], sample, CALIBRATION_SUBSET)
    final = trace.records[int(np.argmin(trace.values()))]
    inf_fj = 1 - final.info["f_j_perf_normalized"]
    inf_sm = 1 - final.info["f_sm_ref"]
    ratio = inf_fj / inf_sm
    ok = 1 / 3 <= ratio <= 3
    report(8, ok, f"(b) final 1-F_J^perf {inf_fj:.2e} vs 1-F_sm {inf_sm:.2e} (ratio {ratio:.2f})")
    assert 1 / 3 <= ratio <= 3


# --------------------------------------------------------------- criterion 9


@pytest.mark.slow
def test_criterion_9_numerical_hygiene(open_loop):
    gate = open_loop["best"][1]
    coarse, fine = SpamSimulator(P), SpamSimulator(P, refine=2)

    def fidelities(sim):
        return {
            "rho1": uhlmann_fidelity(sim.prepare_rho1_average(), RHO1),
            "rho2": uhlmann_fidelity(sim.prepare_rho2(), RHO2),
            "contrast": readout_contrast(sim.unitary("readout_pi")),
            "readout_f_sm": sim.readout_pi_fidelity(),
            "gate_f_sm": fj_of_unitary(sim.gate_unitary(gate)).f_sm,
            "f_j_measured": sim.measured_fj(gate).f_j_normalized,
        }

    a, b = fidelities(coarse), fidelities(fine)
    dt_change = max(abs(a[k] - b[k]) for k in a)

    unitaries = [coarse.unitary(k) for k in coarse.pulses()] + [coarse.gate_unitary(gate)]
    worst_unitarity = max(unitarity_residual(u) for u in unitaries)

    fast = ConstantPulse(TransitionId.E_NONSEL, SpamConfig().angles.theta2, 0.0, 0.010)
    rwa_inf = 0.0
    for label in ("00", "01", "10", "11"):
        rho = projector(label)
        out_rwa = apply_channel(pulse_propagator(P, fast), rho)
        out_full = apply_channel(pulse_propagator(P, fast, rwa=False), rho)
        rwa_inf = max(rwa_inf, 1 - uhlmann_fidelity(out_rwa, out_full))

    ok = worst_unitarity <= 1e-10 and dt_change < 1e-6 and rwa_inf <= 1e-3
    report(9, ok, f"max unitarity residual {worst_unitarity:.1e}; max fidelity change on dt/2 {dt_change:.1e} "
                  f"({max(a, key=lambda k: abs(a[k] - b[k]))}); RWA vs full state infidelity {rwa_inf:.1e}")
    assert worst_unitarity <= 1e-10
    assert dt_change < 1e-6
    assert rwa_inf <= 1e-3
