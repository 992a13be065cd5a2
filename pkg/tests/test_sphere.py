import numpy as np
import pytest
from hypothesis import given, strategies as st

from mkgscatter import sphere


def test_mode_indexing():
    ls, ms = sphere.mode_labels(3)
    assert sphere.n_modes(3) == 16 == ls.size
    for i, (l, m) in enumerate(zip(ls, ms)):
        assert sphere.lm_index(l, m) == i


def test_real_harmonics_orthonormal():
    g = sphere.cached_grid(6)
    gram = (g.Y * g.weights[:, None]).T @ g.Y
    assert np.abs(gram - np.eye(sphere.n_modes(6))).max() < 1e-13


def test_low_degree_closed_forms():
    w = np.array([[0.36, 0.48, 0.8]])
    Y = sphere.real_sph_harm_xyz(1, w)[0]
    c0, c1 = np.sqrt(1 / (4 * np.pi)), np.sqrt(3 / (4 * np.pi))
    assert Y[0] == pytest.approx(c0)
    assert Y[sphere.lm_index(1, 0)] == pytest.approx(c1 * 0.8)
    assert abs(Y[sphere.lm_index(1, 1)]) == pytest.approx(c1 * 0.36)
    assert abs(Y[sphere.lm_index(1, -1)]) == pytest.approx(c1 * 0.48)


def test_integration_closed_forms():
    g = sphere.cached_grid(4)
    x, y, z = g.omega.T
    assert g.integrate(np.ones(g.n_points)) == pytest.approx(4 * np.pi)
    assert g.integrate(x**4 + 2 * z**2 * y**2) == pytest.approx(4 * np.pi / 5 + 8 * np.pi / 15)
    g32 = sphere.SphereGrid(4, 40)
    assert g32.integrate(np.exp(g32.omega[:, 0])) == pytest.approx(4 * np.pi * np.sinh(1.0), rel=1e-13)


@given(st.integers(0, 2 ** 31))
def test_analyze_synthesize_round_trip(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=sphere.n_modes(5))
    g = sphere.cached_grid(5)
    assert np.allclose(g.analyze(g.synthesize(c)), c, atol=1e-12)


def test_product_dealiasing_exact():
    g = sphere.cached_grid(4)
    rng = np.random.default_rng(0)
    a = rng.normal(size=sphere.n_modes(2))
    b = rng.normal(size=sphere.n_modes(2))
    prod = g.synthesize(sphere.pad_band(a, 4)) * g.synthesize(sphere.pad_band(b, 4))
    fine = sphere.cached_grid(4, 12)
    ref = fine.analyze(fine.synthesize(sphere.pad_band(a, 4)) * fine.synthesize(sphere.pad_band(b, 4)))
    assert np.allclose(g.analyze(prod), ref, atol=1e-13)


def test_rotation_generators_commutators():
    W = sphere.rotation_generators(4)
    # [O12, O23] = O13 type relations: check closure of the algebra via antisymmetry
    comm = W[0, 1] @ W[1, 2] - W[1, 2] @ W[0, 1]
    assert np.abs(comm - W[0, 2]).max() < 1e-12 or np.abs(comm + W[0, 2]).max() < 1e-12
    for i in range(3):
        for j in range(3):
            assert np.abs(W[i, j] + W[j, i]).max() < 1e-15


def test_rotation_matches_differentiation():
    # Omega_12 = x d_y - y d_x applied to f = x z (pure l = 2)
    g = sphere.cached_grid(2)
    w = g.omega
    c = g.analyze(w[:, 0] * w[:, 2])
    out = g.synthesize(c @ sphere.rotation_generators(2)[0, 1].T)
    assert np.allclose(out, -w[:, 1] * w[:, 2], atol=1e-13)


def test_multiplication_by_omega():
    M = sphere.multiplication_by_omega(3)
    g = sphere.cached_grid(4)
    rng = np.random.default_rng(3)
    c = rng.normal(size=sphere.n_modes(3))
    for i in range(3):
        ref = g.analyze(g.omega[:, i] * g.synthesize(sphere.pad_band(c, 4)))
        assert np.allclose(c @ M[i].T, ref, atol=1e-13)


def test_gradient_tangent():
    g = sphere.cached_grid(3)
    rng = np.random.default_rng(4)
    grad = g.gradient(rng.normal(size=sphere.n_modes(3)))
    assert np.abs(np.einsum("ip,pi->p", grad, g.omega)).max() < 1e-12


def test_complex_to_real_unitary():
    U = sphere.complex_to_real(4)
    assert np.allclose(U @ U.conj().T, np.eye(U.shape[0]), atol=1e-14)


def test_pad_band_and_band_of():
    c = np.zeros(sphere.n_modes(3))
    c[sphere.lm_index(2, -1)] = 1.0
    assert sphere.band_of(c) == 2
    assert sphere.pad_band(c, 1).shape == (4,)
    assert sphere.pad_band(c, 5)[: c.size].tolist() == c.tolist()
