"""Real spherical harmonics, collocation grids and exact angular operators.

Coefficient vectors are stored in l-major order: index ``l*l + l + m`` for
``m = -l..l``.  The real basis is orthonormal on the unit sphere.
"""

from functools import lru_cache

import numpy as np
from scipy.special import sph_harm_y


def n_modes(l_max):
    return (l_max + 1) ** 2


def lm_index(l, m):
    return l * l + l + m


@lru_cache(maxsize=None)
def mode_labels(l_max):
    """Arrays ``(ls, ms)`` of degree and order for every coefficient slot."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(l_max + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(l_max + 1)])
    ls.setflags(write=False)
    ms.setflags(write=False)
    return ls, ms


def real_sph_harm(l_max, theta, phi):
    """Real orthonormal harmonics at polar angle ``theta`` and azimuth ``phi``.

    Returns an array of shape ``theta.shape + (n_modes(l_max),)``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.empty(theta.shape + (n_modes(l_max),))
    for l in range(l_max + 1):
        out[..., lm_index(l, 0)] = sph_harm_y(l, 0, theta, phi).real
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            sign = np.sqrt(2.0) * (-1) ** m
            out[..., lm_index(l, m)] = sign * y.real
            out[..., lm_index(l, -m)] = sign * y.imag
    return out


def real_sph_harm_xyz(l_max, omega):
    """Same as :func:`real_sph_harm` for unit vectors ``omega[..., 3]``."""
    omega = np.asarray(omega, dtype=float)
    theta = np.arccos(np.clip(omega[..., 2], -1.0, 1.0))
    phi = np.arctan2(omega[..., 1], omega[..., 0])
    return real_sph_harm(l_max, theta, phi)


@lru_cache(maxsize=None)
def complex_to_real(l_max):
    """Unitary ``U`` with ``Y_real = U @ Y_complex`` (complex in m-order)."""
    n = n_modes(l_max)
    U = np.zeros((n, n), dtype=complex)
    s = 1.0 / np.sqrt(2.0)
    for l in range(l_max + 1):
        U[lm_index(l, 0), lm_index(l, 0)] = 1.0
        for m in range(1, l + 1):
            p, q = lm_index(l, m), lm_index(l, -m)
            U[p, p] = s * (-1) ** m
            U[p, q] = s
            U[q, p] = -1j * s * (-1) ** m
            U[q, q] = 1j * s
    return U


@lru_cache(maxsize=None)
def rotation_generators(l_max):
    """Matrices ``W[i, j]`` acting on real coefficients as ``x_i d_j - x_j d_i``.

    Built from the ladder relations for the complex harmonics; the real form
    is obtained by the unitary change of basis and is exactly real.
    """
    n = n_modes(l_max)
    ls, ms = mode_labels(l_max)
    Lz = np.diag(ms.astype(complex))
    Lp = np.zeros((n, n), dtype=complex)
    for k in range(n):
        l, m = ls[k], ms[k]
        if m < l:
            Lp[lm_index(l, m + 1), k] = np.sqrt((l - m) * (l + m + 1))
    Lm = Lp.T.copy()
    Lx = 0.5 * (Lp + Lm)
    Ly = -0.5j * (Lp - Lm)
    U = complex_to_real(l_max)

    def to_real(W_c):
        W = np.conj(U) @ W_c @ U.T
        assert np.abs(W.imag).max() < 1e-12
        return W.real

    W = np.zeros((3, 3, n, n))
    W[0, 1] = to_real(1j * Lz)
    W[1, 2] = to_real(1j * Lx)
    W[2, 0] = to_real(1j * Ly)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        W[j, i] = -W[i, j]
    W.setflags(write=False)
    return W


class SphereGrid:
    """Gauss-Legendre x uniform-azimuth collocation grid.

    Parameters
    ----------
    l_max : int
        Band limit of the coefficient vectors handled by the grid.
    exact_band : int, optional
        Largest band of a product that must still be projected exactly onto
        degrees ``<= l_max``.  Defaults to ``2 * l_max`` (quadratic
        dealiasing, the 3/2 rule).
    """

    def __init__(self, l_max, exact_band=None):
        if exact_band is None:
            exact_band = 2 * l_max
        self.l_max = int(l_max)
        self.exact_band = int(exact_band)
        degree = self.l_max + self.exact_band
        self.n_theta = degree // 2 + 1
        self.n_phi = degree + 1
        mu, wmu = np.polynomial.legendre.leggauss(self.n_theta)
        theta = np.arccos(mu)[:, None] * np.ones(self.n_phi)
        phi = (2 * np.pi * np.arange(self.n_phi) / self.n_phi)[None, :] * np.ones((self.n_theta, 1))
        self.theta = theta.ravel()
        self.phi = phi.ravel()
        self.weights = (wmu[:, None] * np.full(self.n_phi, 2 * np.pi / self.n_phi)).ravel()
        st = np.sin(self.theta)
        self.omega = np.stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)], axis=-1)
        self.Y = real_sph_harm(self.l_max, self.theta, self.phi)
        self.analysis = (self.Y * self.weights[:, None]).T
        W = rotation_generators(self.l_max)
        self.Yrot = np.einsum("pk,ijkn->ijpn", self.Y, W)
        # angular gradient d-slash_i on the unit sphere: omega^j Omega_{ji}
        self.grad = np.einsum("pj,jipn->ipn", self.omega, self.Yrot)

    @property
    def n_points(self):
        return self.theta.size

    def synthesize(self, coeffs):
        """Point values from coefficients along the last axis."""
        return coeffs @ self.Y.T

    def analyze(self, values):
        """Projection of point values (last axis) onto degrees ``<= l_max``."""
        return values @ self.analysis.T

    def gradient(self, coeffs):
        """Cartesian angular gradient on the unit sphere, shape ``(3, ..., n_points)``."""
        return np.stack([coeffs @ self.grad[i].T for i in range(3)])

    def integrate(self, values):
        return values @ self.weights


@lru_cache(maxsize=None)
def _grid(l_max, exact_band):
    return SphereGrid(l_max, exact_band)


def cached_grid(l_max, exact_band=None):
    return _grid(int(l_max), int(2 * l_max if exact_band is None else exact_band))


@lru_cache(maxsize=None)
def multiplication_by_omega(l_max):
    """Matrices ``M[i]`` mapping band ``l_max`` coefficients of f to band
    ``l_max + 1`` coefficients of ``omega_i f`` (exact)."""
    grid = cached_grid(l_max + 1, l_max + 2)
    n_in = n_modes(l_max)
    Yin = grid.Y[:, :n_in]
    M = np.einsum("pa,p,pi,pb->iab", grid.Y, grid.weights, grid.omega, Yin)
    M[np.abs(M) < 1e-14] = 0.0
    M.setflags(write=False)
    return M


def pad_band(coeffs, l_new):
    """Zero-pad (or truncate) coefficient vectors along the last axis."""
    n_new = n_modes(l_new)
    n_old = coeffs.shape[-1]
    if n_new <= n_old:
        return coeffs[..., :n_new]
    out = np.zeros(coeffs.shape[:-1] + (n_new,), dtype=coeffs.dtype)
    out[..., :n_old] = coeffs
    return out


def band_of(coeffs, tol=0.0):
    """Highest degree carrying a coefficient with magnitude above ``tol``."""
    coeffs = np.abs(np.asarray(coeffs))
    n = coeffs.shape[-1]
    l_max = int(round(np.sqrt(n))) - 1
    ls, _ = mode_labels(l_max)
    amp = coeffs.reshape(-1, n).max(axis=0)
    hit = np.nonzero(amp > tol)[0]
    return int(ls[hit].max()) if hit.size else 0
