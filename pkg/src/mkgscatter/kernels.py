"""Light-cone potentials via Funk-Hecke reduction to Legendre functions Q_l.

For a zonal kernel ``K(omega . sigma)`` the spherical integral of
``K * Y_lm`` equals ``2 pi (int_{-1}^1 K P_l) Y_lm(omega)``.  With
``K = 1/(t - r mu)`` the inner integral is ``(2/r) Q_l(t/r)``.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from . import sphere
from .geometry import japan
from .radiation_data import CurrentProfile, q_integral


class LightConeError(ValueError):
    """Evaluation requested on or outside the light cone ``t <= r``."""


# --- Legendre functions of the second kind ----------------------------------

UPWARD_GROWTH_LIMIT = 7.0


def legendre_q_all(l_max, z, zm1=None):
    """``Q_0..Q_{l_max}`` at ``z > 1``; returns shape ``(l_max + 1,) + z.shape``.

    Upward recurrence is only stable while ``rho^(2 l)`` stays small
    (``rho = z + sqrt(z^2 - 1)``, the ratio of the dominant to the minimal
    solution), so points with ``2 l_max ln(rho) > 7`` use Miller's downward
    recurrence on ratios, normalized by the closed form of ``Q_0``.
    Pass ``zm1 = z - 1`` directly to avoid cancellation near the light cone.
    """
    shape = np.shape(z)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zm1 = z - 1.0 if zm1 is None else np.atleast_1d(np.asarray(zm1, dtype=float)) * np.ones_like(z)
    if np.any(zm1 <= 1e-12):
        raise LightConeError("Q_l requires z > 1 + 1e-12")
    out = np.empty((l_max + 1,) + z.shape)
    out[0] = 0.5 * np.log1p(2.0 / zm1)
    if l_max == 0:
        return out.reshape((1,) + shape)
    log_rho = np.log1p(zm1 + np.sqrt(zm1 * (zm1 + 2.0)))
    up = 2.0 * l_max * log_rho <= UPWARD_GROWTH_LIMIT
    if np.any(up):
        zu = z[up]
        q_prev, q_cur = out[0][up], zu * out[0][up] - 1.0
        out[1][up] = q_cur
        for n in range(1, l_max):
            q_prev, q_cur = q_cur, ((2 * n + 1) * zu * q_cur - n * q_prev) / (n + 1)
            out[n + 1][up] = q_cur
    down = ~up
    if np.any(down):
        zd = z[down]
        start = l_max + int(np.ceil(20.0 / log_rho[down].min())) + 10
        ratio = np.zeros_like(zd)
        ratios = np.empty((l_max + 1,) + zd.shape)
        for n in range(start, 0, -1):
            # R_n = Q_n / Q_{n-1} from (n+1) Q_{n+1} = (2n+1) z Q_n - n Q_{n-1}
            ratio = n / ((2 * n + 1) * zd - (n + 1) * ratio)
            if n <= l_max:
                ratios[n] = ratio
        q_cur = out[0][down]
        for n in range(1, l_max + 1):
            q_cur = q_cur * ratios[n]
            out[n][down] = q_cur
    return out.reshape((l_max + 1,) + shape)


def legendre_q(l, z, zm1=None):
    """Legendre function of the second kind ``Q_l(z)`` for real ``z > 1``."""
    if l < 0:
        raise ValueError("degree must be non-negative")
    res = legendre_q_all(int(l), z, zm1)[int(l)]
    return float(res) if np.ndim(res) == 0 else res


def legendre_q_derivatives(l_max, z, n_deriv, zm1=None):
    """``d^n Q_l / dz^n`` for ``n = 0..n_deriv``; shape ``(n_deriv+1, l_max+1, ...)``.

    First derivatives from ``(z^2 - 1) Q_l' = l (z Q_l - Q_{l-1})``; higher ones
    from the differentiated Legendre equation.
    """
    z = np.asarray(z, dtype=float)
    zm1 = z - 1.0 if zm1 is None else np.asarray(zm1, dtype=float) * np.ones_like(z)
    Q = legendre_q_all(l_max, z, zm1)
    z2m1 = zm1 * (zm1 + 2.0)
    out = np.empty((n_deriv + 1,) + Q.shape)
    out[0] = Q
    if n_deriv == 0:
        return out
    out[1, 0] = -1.0 / z2m1
    for l in range(1, l_max + 1):
        out[1, l] = l * (z * Q[l] - Q[l - 1]) / z2m1
    ll = np.arange(l_max + 1).reshape((-1,) + (1,) * z.ndim)
    for n in range(n_deriv - 1):
        out[n + 2] = ((ll * (ll + 1) - n * (n + 1)) * out[n] - 2 * (n + 1) * z * out[n + 1]) / z2m1
    return out


# --- Funk-Hecke weights ------------------------------------------------------

def _check_interior(t, r):
    if np.any(np.asarray(t) - np.asarray(r) <= 0.0):
        raise LightConeError("Funk-Hecke weights need t > r")
    if np.any(np.asarray(r) <= 0.0):
        raise ValueError("Funk-Hecke weights need r > 0")


def funk_hecke_weights(l_max, t, r):
    """``int P_l(mu) / (t - r mu) dmu = (2/r) Q_l(t/r)`` for ``l = 0..l_max``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_interior(t, r)
    Q = legendre_q_all(l_max, t / r, (t - r) / r)
    return 2.0 / r * Q


def funk_hecke_weight(l, t, r):
    """Spherical mean weight ``int_S2 P_l(omega.sigma)/(t - r omega.sigma) dS / (2 pi)``."""
    res = funk_hecke_weights(int(l), t, r)[int(l)]
    return float(res) if np.ndim(res) == 0 else res


def funk_hecke_jets(l_max, t, r):
    """Weights ``k_l`` with their first derivatives ``(k, d_t k, d_r k)``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_interior(t, r)
    z = t / r
    D = legendre_q_derivatives(l_max, z, 1, (t - r) / r)
    k = 2.0 / r * D[0]
    kt = 2.0 / r**2 * D[1]
    kr = -2.0 / r**2 * (D[0] + z * D[1])
    return k, kt, kr


def moment_weights(l_max, t, r, power):
    """``c_l = int P_l(mu) (t - r mu)^(-power) dmu``, ``l = 0..l_max``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_interior(t, r)
    n = power - 1
    D = legendre_q_derivatives(l_max, t / r, n, (t - r) / r)[n]
    fact = float(np.prod(np.arange(1, n + 1))) if n else 1.0
    return 2.0 * (-1.0) ** n / fact * D / r**power


# --- source profiles and potentials -----------------------------------------

@dataclass(frozen=True)
class SourceProfile:
    """Real source ``n(q, omega)`` as harmonic coefficients ``(n_q, n_modes)``."""

    q: np.ndarray
    n: np.ndarray
    a: float = 0.5

    @property
    def l_max(self):
        return int(round(np.sqrt(self.n.shape[-1]))) - 1

    def integrated(self):
        return q_integral(self.n, self.q)

    def tail_ok(self, C=None):
        """``|n| <= C <q>^(-1-a)`` on the outer 10% of the grid."""
        grid = sphere.cached_grid(self.l_max, self.l_max)
        vals = np.abs(grid.synthesize(self.n)).max(axis=-1)
        env = japan(self.q) ** (-1.0 - self.a)
        C = vals.max() / env.max() * 10 if C is None else C
        m = max(1, self.q.size // 10)
        outer = np.r_[np.arange(m), np.arange(self.q.size - m, self.q.size)]
        return bool(np.all(vals[outer] <= C * env[outer]))


@dataclass(frozen=True)
class KernelValue:
    value: np.ndarray
    estimated_error: float


def integrated_source(src):
    """q-integrated coefficients, shape ``(n_components, n_modes)``."""
    if isinstance(src, CurrentProfile):
        return q_integral(np.moveaxis(src.coeffs(), 1, 0), src.q)
    if isinstance(src, SourceProfile):
        return src.integrated()[None]
    raise TypeError("expected CurrentProfile or SourceProfile")


def _tail_estimate(per_l):
    """Geometric extrapolation from the last two per-degree contributions."""
    per_l = np.asarray(per_l)
    if per_l.size < 2 or per_l[-1] == 0.0:
        return float(per_l[-1]) if per_l.size else 0.0
    rho = per_l[-1] / per_l[-2] if per_l[-2] > 0 else 1.0
    return float(per_l[-1] * rho / (1 - rho)) if rho < 1 else float(per_l[-1])


def interior_potential(src, t, x, l_trunc=None, tol=1e-10):
    """``(1/4 pi) int int n(eta, sigma) / (t - r omega.sigma) dS deta``.

    Returns a :class:`KernelValue` with one entry per source component (four
    for a current).  The error estimate extrapolates the decay of the
    per-degree contributions beyond ``l_trunc``.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if t - r < 0.1:
        raise LightConeError(f"interior potential needs t - |x| >= 0.1, got {t - r}")
    N = integrated_source(src)
    band = int(round(np.sqrt(N.shape[-1]))) - 1
    l_use = band if l_trunc is None else min(int(l_trunc), band)
    ls, _ = sphere.mode_labels(l_use)
    N = N[:, : sphere.n_modes(l_use)]
    if r == 0.0:
        value = N[:, 0] * np.sqrt(1 / (4 * np.pi)) / t
        return KernelValue(value, 0.0)
    k = funk_hecke_weights(l_use, t, r)
    Y = sphere.real_sph_harm_xyz(l_use, x / r)
    terms = 0.5 * N * k[ls] * Y
    value = terms.sum(axis=-1)
    per_l = np.array([np.abs(terms[:, ls == l].sum(axis=-1)).max() for l in range(l_use + 1)])
    err = _tail_estimate(per_l) if l_use < band or l_trunc is not None else 0.0
    if err > tol:
        warnings.warn(f"interior potential truncation tail {err:.2e} exceeds {tol:.1e}")
    return KernelValue(value, err)


def smooth_remainder_phi_k(src, k, t, x):
    """``phi_k = int int (n(eta, sigma) - n(eta, omega)) / (t - r omega.sigma)^k``."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if t - r <= 0.0:
        raise LightConeError("phi_k is singular on the light cone")
    N = integrated_source(src)[0]
    l_max = int(round(np.sqrt(N.size))) - 1
    if r == 0.0:
        return 0.0
    ls, _ = sphere.mode_labels(l_max)
    c = moment_weights(l_max, t, r, k)
    Y = sphere.real_sph_harm_xyz(l_max, x / r)
    return float(2 * np.pi * np.sum(N * Y * (c[ls] - c[0])))


def phi_k_envelope(k, t, r):
    """Decay envelope used by the ``phi_1``/``phi_2`` bound checks."""
    tp, tm = japan(t + r), japan(t - r)
    if k == 1:
        return 1.0 / tp
    if k == 2:
        return np.log(tp / tm) / tp**2
    return 1.0 / (tp**2 * tm)
