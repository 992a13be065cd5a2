import numpy as np
import pytest
from hypothesis import given, strategies as st

from mkgscatter import sphere
from mkgscatter.approx import (NullJet, QTable, a_app, box_phi_app, build_approximate,
                               current_J, extract_radiation, gauge_app, leading_phi_term,
                               modes_from_jet, nonlinear_phi, phi_app, raise_index, residual,
                               residual_scan)
from mkgscatter.geometry import japan
from mkgscatter.radiation_data import (ConstraintViolation, from_samples, solve_gauge_constraint,
                                       zero_data)

OMEGA = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
finite = st.floats(-2.0, 2.0, allow_nan=False)


@pytest.fixture(scope="module")
def coulomb_app():
    """Large-charge data used for the Coulomb cancellation check."""
    q = np.linspace(-20, 20, 4001)
    d = from_samples(q, lambda q, w: np.exp(-q**2 - 1j * q) * (1 + 0.3 * w[..., 2]), l_max=2)
    return build_approximate(solve_gauge_constraint(d))


def _profile(Y, q, app):
    n = Y.size
    return app.phi_table(np.array([q]))[0, :n] @ Y


# --- null jets ---------------------------------------------------------------

@given(a=finite, b=finite, t=st.floats(0.5, 3.0), r=st.floats(0.5, 3.0))
def test_jet_product_matches_derivatives(a, b, t, r):
    # g(t) = sin(a t), h(r) = exp(b r): L = d_t + d_r, Lbar L = d_t^2 - d_r^2
    g, g1, g2 = np.sin(a * t), a * np.cos(a * t), -a * a * np.sin(a * t)
    h, h1, h2 = np.exp(b * r), b * np.exp(b * r), b * b * np.exp(b * r)
    p = NullJet.of_t(g, g1, g2) * NullJet.of_r(h, h1, h2)
    assert np.isclose(p.v, g * h)
    assert np.isclose(p.l, g1 * h + g * h1)
    assert np.isclose(p.lb, g1 * h - g * h1)
    assert np.isclose(p.llb, g2 * h - g * h2)
    assert np.isclose(p.d_t, g1 * h) and np.isclose(p.d_r, g * h1)


@given(c=st.floats(-1.0, 1.0), t=st.floats(0.5, 3.0), r=st.floats(0.5, 3.0))
def test_jet_compose_matches_chain_rule(c, t, r):
    # exp(c f) with f = t r: d_t^2 - d_r^2 computed by hand
    f = NullJet.of_t(t, 1.0, 0.0) * NullJet.of_r(r, 1.0, 0.0)
    e = np.exp(c * t * r)
    j = f.compose(e, c * e, c * c * e)
    assert np.isclose(j.v, e)
    assert np.isclose(j.d_t, c * r * e)
    assert np.isclose(j.d_r, c * t * e)
    assert np.isclose(j.llb, c * c * (r * r - t * t) * e)


def test_q_jets_are_annihilated_by_L():
    q = np.linspace(-3, 3, 7)
    j = NullJet.of_q(np.sin(q), np.cos(q))
    assert np.all(j.l == 0) and np.all(j.llb == 0)
    assert np.allclose(j.d_t, -np.cos(q)) and np.allclose(j.d_r, np.cos(q))


def test_spherical_wave_mode_is_free():
    # G(q)/r solves the wave equation for l = 0; l > 0 leaves -l(l+1) G / r^3
    r = np.linspace(5, 50, 10)
    q = r - 3.0
    G = NullJet.of_q(np.exp(-q**2), -2 * q * np.exp(-q**2)).expand()
    ls = np.array([0.0, 1.0, 2.0])
    m = modes_from_jet(G, r, ls)
    assert np.allclose(m.box[:, 0], 0.0)
    assert np.allclose(m.box[:, 2], -6 * np.exp(-q**2) / r**3)


def test_qtable_is_fourth_order_and_fills_outside():
    errs = []
    for n in (101, 201):
        q = np.linspace(-2, 2, n)
        tab = QTable(q, np.sin(q)[:, None])
        x = np.linspace(-1.9, 1.9, 77)
        errs.append(np.abs(tab(x)[:, 0] - np.sin(x)).max())
    assert errs[0] / errs[1] > 12
    tab = QTable(np.linspace(0, 1, 11), np.ones((11, 1)), right=np.array([5.0]))
    assert tab(np.array([-1.0]))[0, 0] == 0.0 and tab(np.array([2.0]))[0, 0] == 5.0


# --- field algebra -----------------------------------------------------------

def test_field_algebra_against_direct_formula(rng):
    phi = np.array(rng.normal() + 1j * rng.normal())
    dphi = rng.normal(size=4) + 1j * rng.normal(size=4)
    A = rng.normal(size=4)
    Au = raise_index(A)
    assert Au[0] == -A[0] and np.all(Au[1:] == A[1:])
    direct = -2j * (Au @ dphi) + (Au @ A) * phi
    assert np.isclose(nonlinear_phi(phi, dphi, A), direct)
    D = dphi + 1j * A * phi
    assert np.allclose(current_J(phi, dphi, A), np.imag(phi * np.conj(D)))


# --- approximate solution ----------------------------------------------------

def test_zero_data_give_zero_solution():
    app = build_approximate(zero_data(l_max=2, n_q=257, Q=10.0))
    assert app.is_zero and app.charge == 0.0
    x = 40.0 * OMEGA
    assert phi_app(app, 41.0, x) == 0
    assert np.all(a_app(app, 41.0, x) == 0)
    res = residual(app, 41.0, x)
    assert res.res_phi == 0 and np.all(res.res_a == 0)


def test_unconstrained_data_rejected():
    q = np.linspace(-20, 20, 1001)
    d = from_samples(q, lambda q, w: np.exp(-q**2 - 1j * q), l_max=1)
    with pytest.raises(ConstraintViolation):
        build_approximate(d)


@given(r=st.floats(1.0, 200.0), u=st.floats(0.0, 1.0))
def test_phi_app_vanishes_off_wave_zone(bench_app, r, u):
    # <q> >= 3r/4 puts the point outside the wave-zone cutoff
    q_abs = np.sqrt(max((0.75 * r * (1 + u)) ** 2 - 1, 0)) + 1e-9
    assert phi_app(bench_app, r + q_abs, r * OMEGA) == 0
    assert phi_app(bench_app, r - q_abs, r * OMEGA) == 0


@given(t=st.floats(1.0, 300.0), r=st.floats(1.0, 300.0))
def test_phi_app_bounded_by_profile_norm(bench_app, bench_data, t, r):
    grid = sphere.cached_grid(bench_data.l_max)
    vals = np.abs(grid.synthesize(bench_data.phi))
    norm = np.max(japan(bench_data.q)[:, None] ** bench_data.gamma * vals)
    q = r - t
    bound = norm * japan(q) ** (-bench_data.gamma) / r
    assert abs(phi_app(bench_app, t, r * OMEGA)) <= bound * (1 + 1e-6) + 1e-300


def test_a_app_is_real(bench_app):
    for t, r in [(10.0, 12.0), (30.0, 27.0), (64.0, 20.0)]:
        a = a_app(bench_app, t, r * OMEGA)
        assert a.dtype == float and a.shape == (4,)


def test_residual_envelope_is_bounded(bench_app):
    rows = residual_scan(bench_app, -3.0, 2.0 ** np.arange(6, 10))
    assert rows.shape == (4, 10)
    assert np.allclose(rows[:, 1] - rows[:, 0], -3.0)
    env = rows[:, 4:9].max(axis=1) / rows[:, 9]
    assert env.max() / env.min() <= 2.0


def test_gauge_decays_like_log_over_r_squared(bench_app):
    vals = [abs(gauge_app(bench_app, r + 3.0, r * OMEGA)) * r**2 / np.log(r)
            for r in 2.0 ** np.arange(6, 10)]
    assert max(vals) / min(vals) <= 2.0


def test_coulomb_term_cancels_leading_box(coulomb_app):
    # Box phi_app is dominated by the 1/r^2 Coulomb phase term; the residual is not
    rel = []
    for r in (100.0, 1000.0):
        x, t = r * OMEGA, r + 0.3
        lead = leading_phi_term(coulomb_app, t, x)
        assert abs(box_phi_app(coulomb_app, t, x) - lead) <= 1e-2 * abs(lead)
        rel.append(abs(residual(coulomb_app, t, x).res_phi) / abs(lead))
    assert rel[1] < rel[0] < 0.05


# --- radiation extraction ----------------------------------------------------

def test_extraction_exact_for_outgoing_profile():
    G = lambda q: np.exp(-q * q)
    ex = extract_radiation(lambda t, x: G(np.linalg.norm(x) - t) / np.linalg.norm(x),
                           0.7, OMEGA, [64.0, 128.0, 256.0])
    assert ex.converged and ex.order == np.inf
    # q = r - t is rebuilt from t = r - q, so only roundoff at scale 256 eps remains
    assert np.isclose(ex.limit, G(0.7), rtol=0, atol=1e-12)


def test_extraction_richardson_on_power_correction():
    f = lambda t, x: (1.0 + 2.0 / np.linalg.norm(x)) / np.linalg.norm(x)
    ex = extract_radiation(f, 0.0, OMEGA, [100.0, 200.0, 400.0])
    assert np.isclose(ex.order, 1.0) and np.isclose(ex.limit, 1.0, atol=1e-12)


def test_extraction_recovers_phi_profile(bench_app):
    Y = sphere.real_sph_harm_xyz(bench_app.l_phi, OMEGA[None])[0]
    strip = lambda r: np.exp(1j * bench_app.kappa * np.log(r))
    for q in (-3.0, 1.5):
        ex = extract_radiation(lambda t, x: phi_app(bench_app, t, x), q, OMEGA,
                               2.0 ** np.arange(10, 13), phase=strip)
        ref = _profile(Y, q, bench_app)
        assert abs(ex.limit - ref) <= 1e-4 * max(abs(ref), 1e-12)


def test_log_forms_differ_at_order_q_over_r(bench_data, bench_app):
    other = build_approximate(bench_data, log_form="t+r")
    diffs = []
    for r in (64.0, 1024.0):
        a, b = a_app(bench_app, r + 3.0, r * OMEGA), a_app(other, r + 3.0, r * OMEGA)
        diffs.append(np.abs(a - b).max())
        assert diffs[-1] <= 1e-4 * np.abs(a).max()
    # ln(<t+r>/(2r)) ~ <q>/r multiplies a 1/r term
    assert 200 < diffs[0] / diffs[1] < 400
    with pytest.raises(ValueError):
        build_approximate(bench_data, log_form="other")
