import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvqoc.metrics import FomReport, fj_of_unitary
from nvqoc.optimize import (
    CALIBRATION_BOUNDS,
    DEFAULT_SUBSETS,
    CalibrationVector,
    DcrabConfig,
    MeasuredFom,
    NelderMeadConfig,
    OptimizationTrace,
    calibration_from_unit,
    calibration_objective,
    calibration_to_unit,
    closed_loop_calibrate,
    dcrab_open_loop,
    guess_pulse,
    nelder_mead,
    parse_subset,
    subset_label,
)
from nvqoc.pulses import DcrabBasis, ShapedPulse
from nvqoc.spam import SpamSimulator
from nvqoc.system import TAU, SystemParams, TransitionId, transition_frequency

P = SystemParams.nominal()


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def test_sphere():
    x, f, tr = nelder_mead(lambda x: float(np.sum(x**2)), [1.0, 1.0], NelderMeadConfig(0.1, 200, 1e-14, 1e-8))
    assert np.all(np.abs(x) < 1e-6)
    assert len(tr) < 200


def test_rosenbrock():
    x, f, tr = nelder_mead(rosenbrock, [-1.2, 1.0], NelderMeadConfig(0.1, 500, 1e-12, 1e-10))
    assert f < 1e-4
    assert len(tr) <= 500


def test_agrees_with_scipy_on_rosenbrock():
    from scipy.optimize import minimize

    ref = minimize(rosenbrock, [-1.2, 1.0], method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14, maxfev=5000))
    x, f, _ = nelder_mead(rosenbrock, [-1.2, 1.0], NelderMeadConfig(0.1, 5000, 1e-14, 1e-10))
    np.testing.assert_allclose(x, ref.x, atol=1e-5)


def test_constant_objective_stops_at_x0():
    x, f, tr = nelder_mead(lambda x: 3.0, [0.5, -0.5, 2.0], NelderMeadConfig(0.1, 1000, 1e-9, 1e-9))
    np.testing.assert_array_equal(x, [0.5, -0.5, 2.0])
    assert f == 3.0 and len(tr) == 4


def test_nan_treated_as_infinite():
    def f(x):
        return math.nan if x[0] > 0.5 else float((x[0] - 0.4) ** 2 + x[1] ** 2)

    x, val, tr = nelder_mead(f, [0.0, 0.3], NelderMeadConfig(0.3, 400, 1e-14, 1e-9))
    assert val < 1e-8
    assert math.isinf(max(r.value for r in tr.records))


def test_non_finite_start_rejected():
    with pytest.raises(ValueError):
        nelder_mead(lambda x: math.nan, [0.0], NelderMeadConfig(0.1, 10))


def test_config_validation():
    with pytest.raises(ValueError):
        NelderMeadConfig(initial_simplex_scale=-1.0)
    with pytest.raises(ValueError):
        nelder_mead(lambda x: 0.0, np.zeros(5), NelderMeadConfig(0.1, 3))


@given(
    center=st.lists(st.floats(-3, 3), min_size=1, max_size=5),
    budget=st.integers(10, 200),
    seed=st.integers(0, 1000),
)
@settings(max_examples=40, deadline=None)
def test_best_never_worse_than_evaluated_and_budget_respected(center, budget, seed):
    c = np.array(center)
    w = np.random.default_rng(seed).uniform(0.5, 5, c.size)
    budget = max(budget, c.size + 1)
    x, f, tr = nelder_mead(lambda x: float(np.sum(w * (x - c) ** 2)), np.zeros(c.size), NelderMeadConfig(0.5, budget))
    assert len(tr) <= budget
    assert f == pytest.approx(min(r.value for r in tr.records), abs=0)
    assert np.all(np.diff(tr.best_values()) <= 0)


def test_deterministic():
    a = nelder_mead(rosenbrock, [-1.2, 1.0], NelderMeadConfig(0.1, 300))
    b = nelder_mead(rosenbrock, [-1.2, 1.0], NelderMeadConfig(0.1, 300))
    np.testing.assert_array_equal(a[0], b[0])
    assert [r.value for r in a[2].records] == [r.value for r in b[2].records]


def test_trace_csv(tmp_path):
    tr = OptimizationTrace(["x", "y"])
    tr.append([1, 2], 0.5, {"f_sm_ref": 0.9})
    tr.append([1, 3], 0.7, {"f_sm_ref": 0.8})
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "eval,x,y,fom,best_so_far,f_sm_ref"
    assert lines[2].split(",")[4] == "0.5"


# ----------------------------------------------------------------- dCRAB


def test_zero_super_iterations_returns_guess():
    cfg = DcrabConfig(n_super=0)
    pulse, trace = dcrab_open_loop(P, cfg)
    assert pulse == guess_pulse(P, cfg)
    assert len(trace) == 0
    assert pulse.carrier == transition_frequency(P, TransitionId.E01_11)
    assert pulse.duration == 1.0 and pulse.phase == 0.0


def test_dcrab_reproducible_and_dressed():
    cfg = DcrabConfig(n_super=2, n_basis=2, seed=3, nm=NelderMeadConfig(max_evals=15))
    a, ta = dcrab_open_loop(P, cfg)
    b, tb = dcrab_open_loop(P, cfg)
    assert a == b
    assert [r.value for r in ta.records] == [r.value for r in tb.records]
    assert len(a.modulation) == 2
    assert [m.super_iteration_index for m in a.modulation] == [0, 1]
    assert ta.best < ta.records[0].value
    assert np.all(np.diff(ta.best_values()) <= 0)
    c, _ = dcrab_open_loop(P, DcrabConfig(n_super=2, n_basis=2, seed=4, nm=NelderMeadConfig(max_evals=15)))
    assert c != a


def test_dcrab_config_validation():
    with pytest.raises(ValueError):
        DcrabConfig(n_basis=0)
    with pytest.raises(ValueError):
        DcrabConfig(duration_bounds=(1.0, 0.5))


# ------------------------------------------------------------ closed loop


def _base_pulse():
    basis = DcrabBasis(((0.3, 0.6, TAU * 1.5 / P.t_hf), (-0.2, 0.1, TAU * 3.3 / P.t_hf)), 0, P.t_hf)
    return ShapedPulse(TAU * 1.0, transition_frequency(P, TransitionId.E01_11), 0.0, P.t_hf, modulation=(basis,))


def test_calibration_vector_apply():
    base = _base_pulse()
    cal = CalibrationVector(1.1, 0.9, TAU * 0.1, 0.2)
    out = cal.apply(base)
    assert out.omega0 == pytest.approx(1.1 * base.omega0)
    assert out.duration == pytest.approx(0.9 * base.duration)
    assert out.carrier == pytest.approx(base.carrier + TAU * 0.1)
    assert out.phase == pytest.approx(0.2)
    assert out.modulation == base.modulation
    assert CalibrationVector().apply(base) == base
    with pytest.raises(ValueError):
        CalibrationVector(duration_scale=0.0)


@given(u=st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_unit_coordinates_round_trip(u):
    subset = DEFAULT_SUBSETS[0]
    cal = calibration_from_unit(np.array(u), subset)
    np.testing.assert_allclose(calibration_to_unit(cal, subset), u, atol=1e-12)
    for k in subset:
        lo, hi = CALIBRATION_BOUNDS[k]
        assert lo <= getattr(cal, k) <= hi


def test_unit_coordinates_are_clipped_and_identity_is_centre():
    subset = DEFAULT_SUBSETS[1]
    np.testing.assert_allclose(calibration_to_unit(CalibrationVector(), subset), 0.5)
    cal = calibration_from_unit(np.array([2.0, -1.0, 0.5]), subset)
    assert cal.amplitude_scale == 1.2 and cal.duration_scale == 0.8 and cal.carrier_shift == 0.0


def test_subset_parsing_and_labels():
    assert parse_subset("Ω,T,ω") == ("amplitude_scale", "duration_scale", "carrier_shift")
    assert parse_subset("omega, T, Omega") == ("amplitude_scale", "duration_scale", "carrier_shift")
    assert subset_label(DEFAULT_SUBSETS[0]) == "Ω,T,ω,φ"
    assert [subset_label(s) for s in DEFAULT_SUBSETS[1:]] == ["Ω,T,ω", "Ω,T,φ", "Ω,ω,φ", "T,ω,φ"]
    with pytest.raises(ValueError):
        parse_subset("Ω,B")


def test_objective_sees_only_the_measurement_handle():
    base = _base_pulse()
    measure = MeasuredFom(SpamSimulator(P, ideal=True))
    objective = calibration_objective(base, ("amplitude_scale",), measure)
    cells = [c.cell_contents for c in objective.__closure__]
    assert not any(isinstance(c, (SystemParams, SpamSimulator)) for c in cells)
    assert not hasattr(measure, "system") and not hasattr(measure, "__dict__")
    # any pulse -> FomReport oracle drives it; no system needed
    fake = calibration_objective(base, ("amplitude_scale",), lambda pulse: FomReport(0.3, 0.9))
    value, info = fake(np.array([0.5]))
    assert value == pytest.approx(1.3926 - 1.2)
    value, _ = objective(np.array([0.5]))
    assert measure.calls == 1


def test_closed_loop_trace_and_budget():
    base = _base_pulse()
    cal, trace = closed_loop_calibrate(base, P, ("amplitude_scale", "carrier_shift"), NelderMeadConfig(0.01, 25))
    assert len(trace) <= 25
    assert np.all(np.isfinite(trace.info_column("f_sm_ref")))
    assert np.all(np.diff(trace.best_values()) <= 0)
    best = trace.records[int(np.argmin(trace.values()))]
    rep_value = best.value
    assert rep_value == pytest.approx(trace.best)
    assert isinstance(cal, CalibrationVector)
