"""Minkowski null geometry, vector fields, weights, cutoffs and stencils.

Conventions: metric ``diag(-1, 1, 1, 1)``, ``q = r - t``, ``p = r + t``,
``L = d_t + d_r``, ``Lbar = d_t - d_r`` and ``<x> = sqrt(1 + x^2)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import sphere

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])


class DegeneratePointError(ValueError):
    """Raised where the angular direction ``x/|x|`` is undefined."""


class StencilDomainError(ValueError):
    """Raised when a stencil would reach outside the sampled lattice."""


def japan(x):
    """Japanese bracket ``sqrt(1 + x^2)``."""
    return np.sqrt(1.0 + np.square(x))


# --- finite differences ------------------------------------------------------

_D1_INNER = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_EDGE = np.array([
    [-25.0, 48.0, -36.0, 16.0, -3.0, 0.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0],
]) / 12.0
_D2_INNER = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D2_EDGE = np.array([
    [45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
    [10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
]) / 12.0


def _apply(f, inner, edge, h_pow, axis, odd):
    f = np.moveaxis(np.asarray(f), axis, 0)
    n = f.shape[0]
    if n < 6:
        raise StencilDomainError(f"need at least 6 samples along the axis, got {n}")
    out = np.empty_like(f, dtype=np.result_type(f, float))
    out[2:-2] = sum(c * f[k:n - 4 + k] for k, c in enumerate(inner) if c != 0.0)
    for i in range(2):
        out[i] = sum(c * f[k] for k, c in enumerate(edge[i]) if c != 0.0)
        sign = -1.0 if odd else 1.0
        out[n - 1 - i] = sign * sum(c * f[n - 1 - k] for k, c in enumerate(edge[i]) if c != 0.0)
    return np.moveaxis(out / h_pow, 0, axis)


def diff1(f, h, axis=-1):
    """Fourth-order first derivative on a uniform grid (one-sided at the ends)."""
    return _apply(f, _D1_INNER, _D1_EDGE, h, axis, odd=True)


def diff2(f, h, axis=-1):
    """Fourth-order second derivative on a uniform grid (one-sided at the ends)."""
    return _apply(f, _D2_INNER, _D2_EDGE, h * h, axis, odd=False)


def _with_parity_ghosts(f, parity):
    """Prepend two mirror points ``f(-r_k) = parity * f(r_k)`` along axis 0."""
    ghost = np.stack([f[2], f[1]]) * parity
    return np.concatenate([ghost, f], axis=0)


def radial_diff1(f, dr, parity):
    """First r-derivative on ``r_j = j*dr`` using reflection ghosts at the axis.

    ``f`` has the radial axis first; ``parity`` broadcasts against ``f[0]``
    and is ``(-1)**l`` for a mode profile ``f_lm``.
    """
    g = _with_parity_ghosts(np.asarray(f), parity)
    return diff1(g, dr, axis=0)[2:]


def radial_diff2(f, dr, parity):
    g = _with_parity_ghosts(np.asarray(f), parity)
    return diff2(g, dr, axis=0)[2:]


# --- cutoffs and weight ------------------------------------------------------

def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi)))
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def _psi_integral(x):
    """``int_0^x psi`` for ``0 <= x <= 1/2`` by composite Gauss-Legendre."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    panels = 4
    for k in range(panels):
        a = x * k / panels
        b = x * (k + 1) / panels
        nodes = 0.5 * (b - a)[..., None] * (_GL_X + 1.0) + a[..., None]
        total += 0.5 * (b - a) * (_psi(nodes) @ _GL_W)
    return total


_PSI_HALF = float(_psi_integral(np.array(0.5)))
_PSI_TOTAL = 2.0 * _PSI_HALF


def smoothstep(x, deriv=0):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, normalized integral of
    ``exp(-1/(x(1-x)))`` in between.  ``deriv`` in 0..3."""
    x = np.asarray(x, dtype=float)
    if deriv == 0:
        out = np.where(x >= 1.0, 1.0, 0.0)
        lo = (x > 0.0) & (x <= 0.5)
        hi = (x > 0.5) & (x < 1.0)
        out[lo] = _psi_integral(x[lo]) / _PSI_TOTAL
        out[hi] = 1.0 - _psi_integral(1.0 - x[hi]) / _PSI_TOTAL
        return out
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    g = xi * (1.0 - xi)
    psi = np.exp(-1.0 / g)
    dg = 1.0 - 2.0 * xi
    # psi = exp(-1/g):  psi' = psi*g'/g^2 with g'' = -2
    a = dg / g**2
    if deriv == 1:
        out[inside] = psi
    elif deriv == 2:
        out[inside] = psi * a
    elif deriv == 3:
        da = (-2.0 * g**2 - dg * 2.0 * g * dg) / g**4
        out[inside] = psi * (a * a + da)
    else:
        raise ValueError("deriv must be 0..3")
    return out / _PSI_TOTAL


@dataclass(frozen=True)
class Cutoff:
    """Smooth transition between ``lo`` and ``hi``; ``rising`` selects 0 -> 1."""

    lo: float
    hi: float
    rising: bool

    def __call__(self, x, deriv=0):
        width = self.hi - self.lo
        s = smoothstep((np.asarray(x, dtype=float) - self.lo) / width, deriv) / width**deriv
        if self.rising:
            return s
        return 1.0 - s if deriv == 0 else -s


@dataclass(frozen=True)
class CutoffFamily:
    chi: Cutoff = Cutoff(0.5, 0.75, rising=False)
    chi_in: Cutoff = Cutoff(-1.0, -0.5, rising=False)
    chi_ex: Cutoff = Cutoff(0.5, 1.0, rising=True)
    chi_tilde: Cutoff = Cutoff(1.0, 2.0, rising=False)

    def describe(self):
        return {name: [c.lo, c.hi, "rising" if c.rising else "falling"]
                for name, c in self.__dict__.items()}


@dataclass(frozen=True)
class Weight:
    """Interior/exterior weight ``w(q)`` of the remainder energy."""

    gamma: float
    mu: float

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        a = 1.0 + np.abs(q)
        return 1.0 + np.where(q < 0.0, a**self.mu, a ** (0.5 - self.gamma))

    def derivative(self, q):
        q = np.asarray(q, dtype=float)
        a = 1.0 + np.abs(q)
        return np.where(q < 0.0, -self.mu * a ** (self.mu - 1.0),
                        (0.5 - self.gamma) * a ** (-0.5 - self.gamma))

    def describe(self):
        return {"gamma": self.gamma, "mu": self.mu}


class UnitWeight:
    def __call__(self, q):
        return np.ones_like(np.asarray(q, dtype=float))

    def derivative(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))

    def describe(self):
        return {"unit": True}


# --- null frame --------------------------------------------------------------

def angular_frame(omega):
    """Unit tangent vectors ``(e1, e2)`` at ``omega``.

    ``e1 = d_theta``, ``e2 = d_phi`` (normalized).  On the z-axis the
    azimuth is taken as 0, so the frame is ``(+-x, y)``.
    """
    omega = np.asarray(omega, dtype=float)
    rho = np.hypot(omega[..., 0], omega[..., 1])
    axis = rho < 1e-14
    cphi = np.where(axis, 1.0, omega[..., 0] / np.where(axis, 1.0, rho))
    sphi = np.where(axis, 0.0, omega[..., 1] / np.where(axis, 1.0, rho))
    ct = omega[..., 2]
    e1 = np.stack([ct * cphi, ct * sphi, -rho], axis=-1)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.stack([-sphi, cphi, np.zeros_like(cphi)], axis=-1)
    return e1, e2


@dataclass(frozen=True)
class NullFrame:
    L: np.ndarray
    Lbar: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def at(cls, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r == 0.0:
            raise DegeneratePointError("null frame undefined at r = 0")
        w = x / r
        e1, e2 = angular_frame(w)
        return cls(np.r_[1.0, w], np.r_[1.0, -w], np.r_[0.0, e1], np.r_[0.0, e2])

    def matrix(self):
        return np.stack([self.L, self.Lbar, self.e1, self.e2])


@dataclass(frozen=True)
class NullDecomposition:
    A_L: float
    A_Lbar: float
    A_e1: float
    A_e2: float

    def as_array(self):
        return np.array([self.A_L, self.A_Lbar, self.A_e1, self.A_e2])


def null_decompose(a, omega, index="upper"):
    """Frame components ``A_X = X^mu A_mu`` of a 4-vector.

    ``index="upper"`` treats ``a`` as ``a^mu`` (lowered with the metric);
    ``index="lower"`` takes the covector components ``A_mu`` directly.
    """
    omega = np.asarray(omega, dtype=float)
    n = np.linalg.norm(omega)
    if n == 0.0:
        raise DegeneratePointError("direction undefined at r = 0")
    frame = NullFrame.at(omega / n)
    a_low = ETA @ np.asarray(a, dtype=float) if index == "upper" else np.asarray(a, dtype=float)
    return NullDecomposition(*(frame.matrix() @ a_low))


def null_reconstruct(dec, omega, index="upper"):
    """Inverse of :func:`null_decompose`:
    ``A_a = -(Lbar_a/2) A_L - (L_a/2) A_Lbar + e_B,a A_eB``."""
    frame = NullFrame.at(np.asarray(omega, dtype=float))
    lower = ETA @ frame.matrix().T  # columns: lowered L, Lbar, e1, e2
    A = (-0.5 * lower[:, 1] * dec.A_L - 0.5 * lower[:, 0] * dec.A_Lbar
         + lower[:, 2] * dec.A_e1 + lower[:, 3] * dec.A_e2)
    return ETA @ A if index == "upper" else A


def coordinate_fields_from_frame(omega):
    """Rows give ``d_alpha`` as combinations of ``(L, Lbar, e1, e2)``."""
    e1, e2 = angular_frame(np.asarray(omega, dtype=float))
    C = np.zeros((4, 4))
    C[0, :2] = 0.5
    C[1:, 0] = 0.5 * omega
    C[1:, 1] = -0.5 * omega
    C[1:, 2] = e1
    C[1:, 3] = e2
    return C


# --- vector fields on mode lattices -----------------------------------------

TAGS = ("d0", "d1", "d2", "d3", "O12", "O13", "O23", "O01", "O02", "O03", "S")


@dataclass(frozen=True)
class VectorFieldId:
    multi_index: tuple

    def __post_init__(self):
        for tag in self.multi_index:
            if tag not in TAGS:
                raise ValueError(f"unknown vector field {tag!r}")

    @property
    def order(self):
        return len(self.multi_index)


@lru_cache(maxsize=None)
def multi_indices(max_order):
    """All ordered multi-indices ``I`` with ``|I| <= max_order``."""
    out = [()]
    frontier = [()]
    for _ in range(max_order):
        frontier = [I + (tag,) for I in frontier for tag in TAGS]
        out.extend(frontier)
    return tuple(out)


class SampledField:
    """Spherical-harmonic coefficients ``f_lm(t_k, r_j)`` on a uniform lattice.

    ``coeffs`` has shape ``(n_t, n_r, n_modes)``; radii start at zero.
    """

    def __init__(self, t, r, coeffs):
        self.t = np.asarray(t, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.coeffs = np.asarray(coeffs)
        if self.coeffs.shape[:2] != (self.t.size, self.r.size):
            raise ValueError("coefficient lattice does not match (t, r)")
        if self.r[0] != 0.0:
            raise ValueError("radial lattice must start at r = 0")
        self.l_max = int(round(np.sqrt(self.coeffs.shape[-1]))) - 1
        self.dr = self.r[1] - self.r[0]
        self.dt = self.t[1] - self.t[0] if self.t.size > 1 else np.nan

    def _new(self, coeffs):
        return SampledField(self.t, self.r, coeffs)

    @property
    def parity(self):
        ls, _ = sphere.mode_labels(self.l_max)
        return np.where(ls % 2 == 0, 1.0, -1.0)

    def d_t(self):
        if self.t.size < 6:
            raise StencilDomainError("time derivative needs at least 6 time levels")
        return self._new(diff1(self.coeffs, self.dt, axis=0))

    def d_r(self):
        g = np.moveaxis(self.coeffs, 1, 0)
        return self._new(np.moveaxis(radial_diff1(g, self.dr, self.parity), 0, 1))

    def rotate(self, i, j):
        W = sphere.rotation_generators(self.l_max)[i, j]
        return self._new(self.coeffs @ W.T)

    def _over_r(self, coeffs):
        """``coeffs / r`` using ``lim f/r = f'(0)`` on the axis (f(0) = 0)."""
        out = np.empty_like(coeffs)
        out[:, 1:] = coeffs[:, 1:] / self.r[None, 1:, None]
        out[:, 0] = self._new(coeffs).d_r().coeffs[:, 0]
        return out

    def times_omega(self, i, coeffs=None):
        M = sphere.multiplication_by_omega(self.l_max)[i]
        c = self.coeffs if coeffs is None else coeffs
        return c @ M.T

    def partial(self, i):
        """Cartesian ``d_i`` (i = 1..3); band grows by one."""
        k = i - 1
        W = sphere.rotation_generators(self.l_max)
        out = self.times_omega(k, self.d_r().coeffs)
        for j in range(3):
            if j != k:
                out = out + self.times_omega(j, self._over_r(self.coeffs @ W[j, k].T))
        return SampledField(self.t, self.r, out)

    def padded(self, l_new):
        return self._new(sphere.pad_band(self.coeffs, l_new))

    def apply(self, tag):
        if tag == "d0":
            return self.d_t()
        if tag in ("d1", "d2", "d3"):
            return self.partial(int(tag[1]))
        if tag in ("O12", "O13", "O23"):
            return self.rotate(int(tag[1]) - 1, int(tag[2]) - 1)
        if tag == "S":
            return self._new(self.t[:, None, None] * self.d_t().coeffs
                             + self.r[None, :, None] * self.d_r().coeffs)
        if tag in ("O01", "O02", "O03"):
            i = int(tag[2])
            dx = self.partial(i).coeffs
            xt = self.r[None, :, None] * self.times_omega(i - 1, self.d_t().coeffs)
            return SampledField(self.t, self.r, self.t[:, None, None] * dx + xt)
        raise ValueError(f"unknown vector field {tag!r}")

    def apply_multi(self, vid):
        f = self
        for tag in reversed(vid.multi_index):
            f = f.apply(tag)
        return f

    def slice_values(self, k, grid):
        """Point values on ``(r_j, grid nodes)`` at time index ``k``."""
        if self.l_max > grid.l_max:
            raise ValueError("grid band limit below field band limit")
        return grid.synthesize(sphere.pad_band(self.coeffs[k], grid.l_max))

    def evaluate(self, t, x):
        """Value at an arbitrary point by local 4th-order Lagrange interpolation."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        Y = sphere.real_sph_harm_xyz(self.l_max, x / r if r > 0 else np.array([0.0, 0.0, 1.0]))
        ct = _lagrange_weights(self.t, t)
        cr = _lagrange_weights(self.r, r)
        return np.einsum("k,j,kjn,n->", ct, cr, self.coeffs, Y)


def _lagrange_weights(nodes, x, order=5):
    n = nodes.size
    if n == 1:
        if not np.isclose(nodes[0], x):
            raise StencilDomainError("single sample cannot be interpolated")
        return np.ones(1)
    if x < nodes[0] - 1e-12 or x > nodes[-1] + 1e-12:
        raise StencilDomainError(f"point {x} outside sampled range [{nodes[0]}, {nodes[-1]}]")
    h = nodes[1] - nodes[0]
    m = min(order, n)
    i0 = int(np.clip(np.floor((x - nodes[0]) / h) - (m - 1) // 2, 0, n - m))
    idx = np.arange(i0, i0 + m)
    w = np.zeros(n)
    xs = nodes[idx]
    for a, ia in enumerate(idx):
        others = np.delete(xs, a)
        w[ia] = np.prod((x - others) / (xs[a] - others))
    return w


def apply_vector_field(vid, f, point):
    """``(Z^I f)(t, x)`` for a :class:`SampledField`; ``point = (t, x)``."""
    if isinstance(vid, str):
        vid = VectorFieldId((vid,))
    t, x = point
    return f.apply_multi(vid).evaluate(t, x)


def tangential_bound_check(f, k=None, max_tr=100.0, C0=8.0, grid=None):
    """Ratio of weighted derivatives to first-order vector fields.

    Reports ``sup [(1+t+r)|dbar f| + (1+|t-r|)|df|] / sum_Z |Z f|`` over the
    time slice ``k`` restricted to ``t + r <= max_tr``; points where the
    denominator vanishes are skipped.
    """
    k = f.t.size // 2 if k is None else k
    l_out = f.l_max + 1
    grid = grid or sphere.cached_grid(l_out, l_out)
    t = f.t[k]
    r = f.r
    vals = {tag: np.abs(f.apply(tag).slice_values(k, grid)) for tag in TAGS}
    ft = f.d_t().slice_values(k, grid)
    fr = f.d_r().slice_values(k, grid)
    grads = np.stack([f.partial(i).slice_values(k, grid) for i in (1, 2, 3)])
    dabs = np.sqrt(np.abs(ft) ** 2 + np.sum(np.abs(grads) ** 2, axis=0))
    slash = grads - grid.omega.T[:, None, :] * fr[None]
    good = np.sqrt(np.abs(ft + fr) ** 2 + np.sum(np.abs(slash) ** 2, axis=0))
    num = (1 + t + r)[:, None] * good + (1 + np.abs(t - r))[:, None] * dabs
    den = sum(vals.values())
    region = ((t + r) <= max_tr)[:, None] & (r > 0)[:, None] & (den > 1e-300)
    ratio = float(np.max(num[region] / den[region])) if region.any() else 0.0
    return {"ratio": ratio, "C0": C0, "passed": ratio <= C0, "points": int(region.sum())}
