import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mkgscatter import sphere
from mkgscatter.diagnostics import (EnergyReport, ModeSlice, build_energy_report, config_hash,
                                    conformal_energy, decay_fit, discrete_box,
                                    energy_identity_residual, energy_identity_terms,
                                    gauge_monitor, hardy_check, ks_pointwise_check,
                                    manufactured_box_residual, manufactured_pulse_slices,
                                    norm_control_check)
from mkgscatter.geometry import SampledField, UnitWeight, Weight
from mkgscatter.radiation_data import zero_data
from mkgscatter.approx import build_approximate
from mkgscatter.solver import SolverGrid, solve_backward

W = Weight(0.9, 0.05)


def manufactured_slices(dr, dt, l=1, T=4.0):
    return manufactured_pulse_slices(dr, dt, l=l, t_end=T)


def free_wave_slice(t, dr=0.01, r_max=40.0):
    G = lambda s: np.exp(-2 * (s - 3) ** 2)
    G1 = lambda s: -4 * (s - 3) * G(s)
    r = np.arange(0, r_max + dr / 2, dr)
    h = (G(t - r) - G(t + r))[:, None]
    return ModeSlice(t, dr, h, (G1(t - r) - G1(t + r))[:, None], np.zeros_like(h))


def bump_slices(T=8.0, dr=0.1, n_t=81):
    r = np.arange(0, 30 + dr / 2, dr)
    bump = (r * np.exp(-((r - 6.0) ** 2)))[:, None]
    return [ModeSlice(t, dr, (T - t) ** 2 * bump, -2 * (T - t) * bump)
            for t in np.linspace(0.0, T, n_t)]


def gaussian_field(dr=0.1, dt=0.05, l_max=0):
    r = np.arange(0, 20 + dr / 2, dr)
    t = 4.0 + (np.arange(7) - 3) * dt
    c = np.zeros((7, r.size, sphere.n_modes(l_max)))
    c[..., 0] = np.exp(-((r[None, :] - 5.0 - t[:, None]) ** 2))
    if l_max:
        c[..., sphere.lm_index(1, 0)] = 0.5 * r[None] * c[..., 0]
    return SampledField(t, r, c)


# --- energy ------------------------------------------------------------------

def test_energy_of_zero_is_zero():
    sl = ModeSlice(1.0, 0.1, np.zeros((50, 4)), np.zeros((50, 4)))
    assert conformal_energy(sl) == 0.0 and conformal_energy(sl, W) == 0.0


@given(c=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_energy_is_quadratic(c):
    sl = manufactured_slices(0.1, 0.1, T=0.0)[0]
    base = conformal_energy(sl, W)
    scaled = ModeSlice(sl.t, sl.dr, c * sl.h, c * sl.h_t)
    assert np.isclose(conformal_energy(scaled, W), abs(c) ** 2 * base, rtol=1e-12, atol=1e-300)


def test_energy_nonnegative_with_weight(rng):
    for _ in range(5):
        h = rng.normal(size=(200, 4)) * np.exp(-np.linspace(0, 10, 200) ** 2)[:, None]
        h[0] = 0
        assert conformal_energy(ModeSlice(2.0, 0.05, h, rng.normal(size=h.shape) * h), W) >= 0


def test_free_wave_energy_conserved():
    E = [conformal_energy(free_wave_slice(t)) for t in (0.0, 5.0, 10.0)]
    assert np.abs(np.array(E) / E[0] - 1).max() <= 1e-6


def test_slice_time_mismatch_and_envelope_warning():
    sl = free_wave_slice(0.0, r_max=10.0)
    with pytest.raises(ValueError):
        conformal_energy(sl, t=1.0)
    wide = ModeSlice(0.0, 0.1, np.ones((50, 1)), np.zeros((50, 1)))
    with pytest.warns(UserWarning):
        conformal_energy(wide)


def test_energy_identity_zero_and_free_wave():
    z = [ModeSlice(t, 0.1, np.zeros((40, 1)), np.zeros((40, 1)), np.zeros((40, 1)))
         for t in (0.0, 1.0)]
    assert energy_identity_residual(z) == 0.0
    free = [free_wave_slice(t, dr=0.02, r_max=30.0) for t in np.arange(0, 10.01, 0.5)]
    assert energy_identity_residual(free, UnitWeight()) <= 1e-6


def test_energy_identity_manufactured_order():
    res = [energy_identity_residual(manufactured_slices(d, d), W) for d in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 2.0) and res[-1] <= 1e-3


def test_energy_identity_bulk_sign():
    # w' <= 0 for q <= 0 and w' >= 0 outside; the pulse sits in the exterior here
    terms = energy_identity_terms(manufactured_slices(0.1, 0.1), W)
    assert terms.E1 > 0 and terms.E2 > 0
    assert terms.bulk <= 0.0


def test_slices_must_ascend():
    s = manufactured_slices(0.2, 0.2, T=0.4)
    with pytest.raises(ValueError):
        energy_identity_terms(s[::-1], W)


# --- inequality checks -------------------------------------------------------

def test_hardy_zero_and_bump():
    z = [ModeSlice(t, 0.1, np.zeros((30, 1)), np.zeros((30, 1))) for t in (0.0, 1.0, 2.0)]
    assert hardy_check(z, W) == (0.0, True)
    ratio, ok = hardy_check(bump_slices(), W)
    assert ok and 0 < ratio <= 10


def test_hardy_ratio_stable_under_refinement():
    a, _ = hardy_check(bump_slices(dr=0.1, n_t=81), W)
    b, _ = hardy_check(bump_slices(dr=0.05, n_t=161), W)
    assert abs(a / b - 1) <= 0.2


def test_hardy_warns_on_nontrivial_end():
    s = bump_slices()
    s[-1] = ModeSlice(s[-1].t, s[-1].dr, s[0].h, s[0].h_t)
    with pytest.warns(UserWarning):
        hardy_check(s, W)


def test_ks_zero_and_gaussian():
    f = gaussian_field()
    zero = SampledField(f.t, f.r, np.zeros_like(f.coeffs))
    assert ks_pointwise_check(zero, 3, W).ratio == 0.0
    rep = ks_pointwise_check(f, 3, W)
    assert rep.passed and 0 < rep.ratio <= 10 and rep.t == f.t[3]


def test_ks_ratio_stable_under_refinement():
    a = ks_pointwise_check(gaussian_field(0.1, 0.05, l_max=1), 3, W).ratio
    b = ks_pointwise_check(gaussian_field(0.05, 0.025, l_max=1), 3, W).ratio
    assert abs(a / b - 1) <= 0.2


def test_norm_control():
    f = gaussian_field()
    zero = SampledField(f.t, f.r, np.zeros_like(f.coeffs))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert norm_control_check(zero, 3, W) == (0.0, 0.0)
    a, b = norm_control_check(f, 3, W)
    assert 0 < a < 10 and 0 < b < 10


# --- decay fits --------------------------------------------------------------

def test_decay_fit_exact_model():
    t = 2.0 ** np.arange(0, 8)
    fit = decay_fit(t, 3.0 * (1 + t * t) ** (-0.175))
    assert abs(fit.exponent + 0.35) <= 1e-12 and fit.ci <= 1e-10
    assert np.allclose(fit.model(t), 3.0 * (1 + t * t) ** (-0.175))


def test_decay_fit_noisy_interval_covers_truth():
    rng = np.random.default_rng(7)
    t = 2.0 ** np.arange(0, 10, 0.5)
    covered = 0
    for _ in range(50):
        v = (1 + t * t) ** (-0.175) * (1 + 0.01 * rng.normal(size=t.size))
        fit = decay_fit(t, v)
        covered += abs(fit.exponent + 0.35) <= fit.ci
    assert covered >= 43  # 95% interval, binomial slack


def test_decay_fit_constant_and_rejections():
    t = np.arange(1.0, 9.0)
    assert decay_fit(t, np.full(t.size, 2.5)).exponent == pytest.approx(0.0, abs=1e-14)
    v = np.array([1.0, -1.0, 0.5, 0.0, 0.3, 0.2, 0.1, np.nan])
    with pytest.warns(UserWarning, match="fewer than six"):
        fit = decay_fit(t, v)
    assert fit.n == 5 and len(fit.rejected) == 3
    with pytest.raises(ValueError):
        decay_fit([1.0, 2.0], [1.0, 2.0])


# --- discrete box and gauge monitor ------------------------------------------

def test_manufactured_box_second_order():
    e = [manufactured_box_residual(d, d / 2, l=l) for l in (0, 2) for d in (0.25, 0.125)]
    assert np.log2(e[0] / e[1]) >= 2 and np.log2(e[2] / e[3]) >= 2


def test_discrete_box_of_free_wave():
    dr, dt = 0.05, 0.025
    r = np.arange(0, 30 + dr / 2, dr)
    t = 5.0 + (np.arange(7) - 3) * dt
    G = lambda s: np.exp(-2 * (s - 3) ** 2)
    c = np.zeros((7, r.size, 1))
    c[..., 0] = G(t[:, None] - r[None]) - G(t[:, None] + r[None])
    c[:, 1:, 0] /= r[1:]
    c[:, 0, 0] = 8 * (t - 3) * G(t)  # axis limit -2 G'(t)
    box = discrete_box(SampledField(t, r, c), 3)
    assert np.abs(box[1:]).max() <= 1e-3 * np.abs(c).max()


def test_gauge_monitor_zero_data():
    d = zero_data(l_max=2, n_q=257, Q=10.0, eps=0.0)
    app = build_approximate(d)
    res = solve_backward(d, grid=SolverGrid(2.0, 0.25, l_max=2), app=app, checkpoint_dt=4.0,
                         window_times=[1.0, 2.0])
    gm = gauge_monitor(res, app)
    assert gm.times == [1.0, 2.0]
    assert gm.sup_lambda == [0.0, 0.0] and gm.sup_z_lambda == [0.0, 0.0]
    assert gm.wave_residual == [0.0, 0.0] and gm.plateau_ok


# --- report ------------------------------------------------------------------

@pytest.mark.filterwarnings("ignore:field does not decay")
def test_energy_report_serialization(bench_data, bench_app):
    res = solve_backward(bench_data, grid=SolverGrid(2.0, 0.25), app=bench_app,
                         checkpoint_dt=0.5, support_tol=1.0)
    rep = build_energy_report(res, W, config_hash="abc", fit_window=(0.5, 4.0))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t,quantity,field,value"
    assert len(lines) == 1 + 3 * 5 * len(res.checkpoints)
    summary = json.loads(rep.to_json())
    assert summary["config_hash"] == "abc"
    assert summary["summary"]["theorem_exponent"] == pytest.approx(-0.175)
    assert "exponent" in summary["summary"]["fit_u"]
    for name in ("u", "v0"):
        ts, E = rep.series("energy", name)
        assert np.all(E >= 0) and np.all(np.diff(ts) > 0)
        # accumulated |w'| integrals grow as the window extends downward in t
        _, S = rep.series("S1", name)
        assert np.all(np.diff(S[::-1]) >= 0)


def test_energy_report_series_roundtrip():
    rep = EnergyReport("x")
    rep.add(2.0, "energy", "u", 1.0)
    rep.add(1.0, "energy", "u", 3.0)
    t, v = rep.series("energy", "u")
    assert list(t) == [1.0, 2.0] and list(v) == [3.0, 1.0]


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16
