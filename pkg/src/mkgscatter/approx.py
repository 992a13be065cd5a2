"""Explicit approximate solution built from radiation data, and its residuals.

Every term of the potential and of the scalar field is a sum over harmonics of
``G_lm(t, r) / r * Y_lm(omega)``.  The radial factors ``G`` are handled as
jets in null directions, ``(G, L G, Lbar G, Lbar L G)``, so that
``Box(G/r Y) = -(Lbar L G)/r - l(l+1) G / r^3`` is exact up to the accuracy of
the tabulated data.  A function of ``q`` alone has ``L F = 0`` and
``Lbar F = -2 F'``, so no second q-derivative of the data is ever needed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from . import sphere
from .geometry import CutoffFamily, japan, diff1
from .kernels import funk_hecke_jets, legendre_q_all
from .radiation_data import (ConstraintViolation, compute_charge, compute_current,
                             gauge_residual, gauge_tolerance)


# --- null jets ---------------------------------------------------------------

class NullJet:
    """``(value, L, Lbar, Lbar L)`` of a function of ``(t, r)``."""

    __slots__ = ("v", "l", "lb", "llb")

    def __init__(self, v, l, lb, llb):
        self.v, self.l, self.lb, self.llb = v, l, lb, llb

    @classmethod
    def of_q(cls, f, f1):
        z = np.zeros_like(f)
        return cls(f, z, -2.0 * f1, z)

    @classmethod
    def of_r(cls, f, f1, f2):
        return cls(f, f1, -f1, -f2)

    @classmethod
    def of_t(cls, f, f1, f2):
        return cls(f, f1, f1, f2)

    @classmethod
    def const(cls, c):
        z = np.zeros_like(c)
        return cls(c, z, z, z)

    def __mul__(self, o):
        if not isinstance(o, NullJet):
            return NullJet(self.v * o, self.l * o, self.lb * o, self.llb * o)
        return NullJet(self.v * o.v, self.l * o.v + self.v * o.l, self.lb * o.v + self.v * o.lb,
                       self.llb * o.v + self.l * o.lb + self.lb * o.l + self.v * o.llb)

    __rmul__ = __mul__

    def __add__(self, o):
        return NullJet(self.v + o.v, self.l + o.l, self.lb + o.lb, self.llb + o.llb)

    def __sub__(self, o):
        return NullJet(self.v - o.v, self.l - o.l, self.lb - o.lb, self.llb - o.llb)

    def __neg__(self):
        return NullJet(-self.v, -self.l, -self.lb, -self.llb)

    def compose(self, h, h1, h2):
        """Jet of ``h(self)`` given ``h, h', h''`` evaluated at ``self.v``."""
        return NullJet(h, h1 * self.l, h1 * self.lb, h2 * self.l * self.lb + h1 * self.llb)

    def expand(self, axis=-1):
        return NullJet(*(np.expand_dims(a, axis) for a in (self.v, self.l, self.lb, self.llb)))

    @property
    def d_t(self):
        return 0.5 * (self.l + self.lb)

    @property
    def d_r(self):
        return 0.5 * (self.l - self.lb)


@dataclass
class ModeJets:
    """Coefficients of a field and its first derivatives and d'Alembertian."""

    v: np.ndarray
    d_t: np.ndarray
    d_r: np.ndarray
    box: np.ndarray


def modes_from_jet(G, r, ls):
    """Mode coefficients of ``G / r`` (radius on axis -2, modes on axis -1)."""
    rr = r[:, None]
    return ModeJets(
        v=G.v / rr,
        d_t=G.d_t / rr,
        d_r=G.d_r / rr - G.v / rr**2,
        box=-G.llb / rr - ls * (ls + 1) * G.v / rr**3,
    )


# --- tabulated q-profiles ----------------------------------------------------

class QTable:
    """Columns tabulated on a uniform q-grid with 4-point Lagrange lookup."""

    def __init__(self, q, columns, left=None, right=None):
        self.q = np.asarray(q, dtype=float)
        self.h = self.q[1] - self.q[0]
        self.columns = np.asarray(columns)
        n_col = self.columns.shape[1:]
        self.left = np.zeros(n_col, self.columns.dtype) if left is None else left
        self.right = np.zeros(n_col, self.columns.dtype) if right is None else right

    def __call__(self, qs):
        qs = np.asarray(qs, dtype=float)
        n = self.q.size
        x = (qs - self.q[0]) / self.h
        i0 = np.clip(np.floor(x).astype(int) - 1, 0, n - 4)
        u = x - i0
        w = np.stack([-(u - 1) * (u - 2) * (u - 3) / 6, u * (u - 2) * (u - 3) / 2,
                      -u * (u - 1) * (u - 3) / 2, u * (u - 1) * (u - 2) / 6], axis=-1)
        idx = i0[:, None] + np.arange(4)
        out = np.einsum("pk,pk...->p...", w, self.columns[idx])
        out[qs < self.q[0]] = self.left
        out[qs > self.q[-1]] = self.right
        return out


# --- the approximate solution -----------------------------------------------

class ApproximateSolution:
    """Evaluators of ``phi_app`` and ``A_app`` with derivatives and residual sources."""

    def __init__(self, data, charge, cutoffs, current, log_form="2r"):
        if log_form not in ("2r", "t+r"):
            raise ValueError("log_form must be '2r' or 't+r'")
        self.log_form = log_form
        self.data = data
        self.charge = float(charge)
        self.cutoffs = cutoffs
        self.current = current
        self.kappa = self.charge / (4 * np.pi)
        q = data.q
        self.l_phi = data.l_max
        self.l_J = current.l_max + 1
        self.l_A = max(data.l_max, self.l_J)
        nA = sphere.n_modes(self.l_A)
        J = sphere.pad_band(current.coeffs(), self.l_A)
        I_minus = cumulative_simpson(J, x=q, axis=1, initial=0.0)
        self.N = I_minus[:, -1].copy()
        a = sphere.pad_band(data.a, self.l_A)
        self.phi_table = QTable(q, np.concatenate([data.phi, diff1(data.phi, data.dq, axis=0)], axis=1))
        cols = np.concatenate([a, diff1(a, data.dq, axis=1), I_minus, J], axis=2)
        right = np.zeros((4, 4 * nA))
        right[:, 2 * nA:3 * nA] = self.N
        self.a_table = QTable(q, np.moveaxis(cols, 0, 1), right=right)
        self.ls_phi = sphere.mode_labels(self.l_phi)[0].astype(float)
        self.ls_A = sphere.mode_labels(self.l_A)[0].astype(float)
        self.is_zero = not (np.any(data.phi) or np.any(data.a))

    # radial building blocks
    def _s_jet(self, q, r):
        jq = japan(q)
        return NullJet.of_q(jq, q / jq) * NullJet.of_r(1 / r, -1 / r**2, 2 / r**3)

    def _chi_wave(self, q, r):
        s = self._s_jet(q, r)
        chi = self.cutoffs.chi
        return s.compose(chi(s.v), chi(s.v, 1), chi(s.v, 2))

    def phi_modes(self, t, r):
        r = np.asarray(r, dtype=float)
        q = r - t
        nphi = sphere.n_modes(self.l_phi)
        tab = self.phi_table(q)
        Phi = NullJet.of_q(tab[:, :nphi], tab[:, nphi:])
        E = np.exp(-1j * self.kappa * np.log(r))
        ik = -1j * self.kappa
        Ej = NullJet.of_r(E, ik * E / r, ik * (ik - 1) * E / r**2)
        G = Phi * (Ej * self._chi_wave(q, r)).expand()
        return modes_from_jet(G, r, self.ls_phi)

    def a_modes(self, t, r):
        """Mode jets of all four components, arrays of shape ``(4, n_r, n_modes)``."""
        r = np.asarray(r, dtype=float)
        q = r - t
        nA = sphere.n_modes(self.l_A)
        tab = self.a_table(q)  # (n_r, 4, 4*nA)
        A = NullJet.of_q(tab[..., :nA], tab[..., nA:2 * nA])
        Im = NullJet.of_q(tab[..., 2 * nA:3 * nA], tab[..., 3 * nA:])
        Ip = NullJet.of_q(self.N[None] - Im.v, -tab[..., 3 * nA:])
        cut = self.cutoffs
        chi = self._chi_wave(q, r)
        cin = NullJet.of_q(cut.chi_in(q), cut.chi_in(q, 1))
        jq = japan(q)
        if self.log_form == "2r":
            top = NullJet.of_r(np.log(2 * r), 1 / r, -1 / r**2)
        else:
            # ln<t+r> depends on t+r only: L = 2 d_s, Lbar = 0
            s = t + r
            z = np.zeros_like(s)
            top = NullJet(np.log(japan(s)), 2 * s / japan(s) ** 2, z, z)
        log = top - NullJet.of_q(np.log(jq), q / jq**2)
        half_log_chi = 0.5 * log * chi
        one = NullJet.const(np.ones_like(q))
        G = A * chi.expand().expand()
        G = G - Im * (half_log_chi * cin).expand().expand()
        G = G + Ip * (half_log_chi * (one - cin)).expand().expand()
        # Coulomb tail, angular constant, time component only
        cex = NullJet.of_q(cut.chi_ex(q), cut.chi_ex(q, 1)) * (self.kappa * np.sqrt(4 * np.pi))
        G.v[:, 0, 0] += cex.v
        G.lb[:, 0, 0] += cex.lb
        G = G + self._interior_jet(t, r, q)
        G = NullJet(*(np.moveaxis(x, 1, 0) for x in (G.v, G.l, G.lb, G.llb)))
        return modes_from_jet_stack(G, r, self.ls_A)

    def _interior_jet(self, t, r, q):
        """``(r/2) N_lm k_l(t, r) chi_ex(t/12) chi_in(q)`` in jet form."""
        nA = sphere.n_modes(self.l_A)
        shape = (r.size, 4, nA)
        out = NullJet(*(np.zeros(shape) for _ in range(4)))
        cut = self.cutoffs
        cex_t = cut.chi_ex(np.array(t / 12.0))
        active = (q <= -0.5) & (cex_t > 0.0)
        if not np.any(active):
            return out
        ra, qa = r[active], q[active]
        k, kt, kr = funk_hecke_jets(self.l_A, t, ra)
        li = self.ls_A.astype(int)
        ll = self.ls_A[:, None]
        rk = 2.0 * legendre_q_all(self.l_A, t / ra, (t - ra) / ra)
        d_t = ra * kt
        d_r = k + ra * kr
        K = NullJet(rk[li].T, (d_t + d_r)[li].T, (d_t - d_r)[li].T, (-ll * (ll + 1) * k[li] / ra).T)
        X = (NullJet.of_t(cex_t * np.ones_like(ra), cut.chi_ex(np.array(t / 12.0), 1) / 12 * np.ones_like(ra),
                          cut.chi_ex(np.array(t / 12.0), 2) / 144 * np.ones_like(ra))
             * NullJet.of_q(cut.chi_in(qa), cut.chi_in(qa, 1)))
        J = (K * X.expand()).expand(1) * (0.5 * self.N[None])
        for name in NullJet.__slots__:
            getattr(out, name)[active] = getattr(J, name)
        return out

    # point values on collocation grids
    def fields_on_grid(self, t, r, grid):
        """Point values on ``(r_j, grid nodes)`` needed by residuals and the solver."""
        pm = self.phi_modes(t, r)
        am = self.a_modes(t, r)
        gl = grid.l_max
        syn = lambda c: grid.synthesize(sphere.pad_band(c, gl))
        grad = lambda c: grid.gradient(sphere.pad_band(c, gl))
        rr = np.asarray(r, dtype=float)[:, None]
        om = grid.omega.T[:, None, :]
        phi_r = syn(pm.d_r)
        dphi = np.concatenate([syn(pm.d_t)[None], om * phi_r[None] + grad(pm.v) / rr[None]])
        return {
            "phi": syn(pm.v),
            "dphi": dphi,
            "box_phi": syn(pm.box),
            "A": syn(am.v),
            "box_A": syn(am.box),
        }

    def gauge_on_grid(self, t, r, grid):
        """``lambda_app = d^alpha A_alpha = -d_t A_0 + d_i A_i`` on the grid."""
        am = self.a_modes(t, r)
        gl = grid.l_max
        rr = np.asarray(r, dtype=float)[:, None]
        lam = -grid.synthesize(sphere.pad_band(am.d_t[0], gl))
        for i in range(3):
            lam = lam + grid.omega[:, i] * grid.synthesize(sphere.pad_band(am.d_r[i + 1], gl))
            lam = lam + grid.gradient(sphere.pad_band(am.v[i + 1], gl))[i] / rr
        return lam

    def residual_on_grid(self, t, r, grid):
        f = self.fields_on_grid(t, r, grid)
        return residual_from_fields(f["phi"], f["dphi"], f["box_phi"], f["A"], f["box_A"])

    def grid_for(self, exact_band=None):
        l = max(self.l_phi, self.l_A) + 1
        return sphere.cached_grid(l, l if exact_band is None else exact_band)


def modes_from_jet_stack(G, r, ls):
    rr = r[None, :, None]
    return ModeJets(
        v=G.v / rr,
        d_t=G.d_t / rr,
        d_r=G.d_r / rr - G.v / rr**2,
        box=-G.llb / rr - ls * (ls + 1) * G.v / rr**3,
    )


def raise_index(A):
    out = np.array(A, copy=True)
    out[0] = -out[0]
    return out


def nonlinear_phi(phi, dphi, A):
    """``-2i A^a d_a phi + A^a A_a phi``."""
    Au = raise_index(A)
    return -2j * np.sum(Au * dphi, axis=0) + np.sum(Au * A, axis=0) * phi


def current_J(phi, dphi, A):
    """``J_a = Im(phi conj((d_a + i A_a) phi))``."""
    return np.imag(phi[None] * np.conj(dphi)) - A * np.abs(phi[None]) ** 2


def residual_from_fields(phi, dphi, box_phi, A, box_A):
    res_phi = box_phi - nonlinear_phi(phi, dphi, A)
    res_a = box_A + current_J(phi, dphi, A)
    return res_phi, res_a


@dataclass
class ResidualField:
    res_phi: complex
    res_a: np.ndarray


def build_approximate(data, charge=None, cutoffs=None, tol=None, log_form="2r"):
    """Assemble the approximate solution; rejects data violating the gauge condition.

    ``log_form`` selects the wave-zone logarithm ``ln(2r/<q>)`` (default) or
    ``ln(<t+r>/<q>)``; the two differ by ``O(<q>/r)``.
    """
    cutoffs = cutoffs or CutoffFamily()
    current = compute_current(data)
    charge = compute_charge(data, current) if charge is None else charge
    tol = gauge_tolerance(charge) if tol is None else tol
    res = gauge_residual(data, charge, cutoffs)
    if res > tol:
        raise ConstraintViolation(
            f"data violate the asymptotic gauge condition (residual {res:.3e}); "
            "run solve_gauge_constraint first")
    return ApproximateSolution(data, charge, cutoffs, current, log_form)


class PointGrid:
    """Angular evaluation at explicit unit vectors (duck-types SphereGrid)."""

    def __init__(self, l_max, omega):
        self.l_max = l_max
        self.omega = np.atleast_2d(np.asarray(omega, dtype=float))
        self.omega = self.omega / np.linalg.norm(self.omega, axis=-1, keepdims=True)
        self.Y = sphere.real_sph_harm_xyz(l_max, self.omega)
        W = sphere.rotation_generators(l_max)
        Yrot = np.einsum("pk,ijkn->ijpn", self.Y, W)
        self.grad = np.einsum("pj,jipn->ipn", self.omega, Yrot)

    def synthesize(self, coeffs):
        return sphere.pad_band(coeffs, self.l_max) @ self.Y.T

    def gradient(self, coeffs):
        coeffs = sphere.pad_band(coeffs, self.l_max)
        return np.stack([coeffs @ self.grad[i].T for i in range(3)])


def _point(app, t, x):
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise ValueError("evaluation at r = 0 is outside the wave-zone construction")
    return np.array([r]), PointGrid(max(app.l_phi, app.l_A), x / r)


def residual(app, t, x):
    """Residual of both equations at one spacetime point."""
    r, g = _point(app, t, x)
    res_phi, res_a = app.residual_on_grid(t, r, g)
    return ResidualField(complex(res_phi[0, 0]), res_a[:, 0, 0].copy())


def phi_app(app, t, x):
    r, g = _point(app, t, x)
    return complex(g.synthesize(app.phi_modes(t, r).v)[0, 0])


def a_app(app, t, x):
    r, g = _point(app, t, x)
    return g.synthesize(app.a_modes(t, r).v)[:, 0, 0]


def leading_phi_term(app, t, x):
    """``-i e^{-i kappa ln r} (q/2pi) d_q Phi / r^2 chi``: the part of
    ``Box phi_app`` cancelled by the Coulomb interaction."""
    r, g = _point(app, t, x)
    q = r - t
    nphi = sphere.n_modes(app.l_phi)
    dPhi = g.synthesize(app.phi_table(q)[:, nphi:])[0, 0]
    chi = app.cutoffs.chi(japan(q) / r)[0]
    E = np.exp(-1j * app.kappa * np.log(r[0]))
    return -1j * E * (app.charge / (2 * np.pi)) * dPhi / r[0] ** 2 * chi


def box_phi_app(app, t, x):
    r, g = _point(app, t, x)
    return complex(g.synthesize(app.phi_modes(t, r).box)[0, 0])


def gauge_app(app, t, x):
    r, g = _point(app, t, x)
    return float(app.gauge_on_grid(t, r, g)[0, 0])


# --- radiation field extraction ---------------------------------------------

@dataclass
class RadiationExtraction:
    limit: complex
    order: float
    converged: bool
    samples: np.ndarray


def extract_radiation(evaluator, q, omega, r_list, phase=None, tol=1e-12, max_order=None):
    """Limit of ``r f(r - q, r omega)`` along fixed ``(q, omega)``.

    ``phase(r)`` multiplies the samples before extrapolation (for instance
    ``exp(+i kappa ln r)`` to strip the Coulomb phase).  Richardson
    extrapolation uses the last three samples.  Sequences whose increments
    sit below ``tol`` relative to the sample size are taken as converged;
    an exactly constant sequence is reported with order ``inf``.
    """
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.linalg.norm(omega)
    r_list = np.asarray(r_list, dtype=float)
    vals = np.array([r * evaluator(r - q, r * omega) * (1.0 if phase is None else phase(r))
                     for r in r_list])
    scale = max(np.abs(vals).max(), 1e-300)
    d = np.diff(vals)
    if np.all(np.abs(d) <= tol * scale):
        return RadiationExtraction(vals[-1], np.inf, True, vals)
    if vals.size < 3:
        return RadiationExtraction(vals[-1], np.nan, False, vals)
    ratio = r_list[-1] / r_list[-2]
    d1, d2 = d[-2], d[-1]
    p = np.log(abs(d1) / abs(d2)) / np.log(ratio) if abs(d2) > 0 else np.inf
    if abs(d2) <= tol * scale:
        return RadiationExtraction(vals[-1], p, True, vals)
    if max_order is not None:
        p = min(p, max_order)
    if not np.isfinite(p) or p <= 0.0:
        return RadiationExtraction(vals[-1], p, False, vals)
    limit = vals[-1] + d2 / (ratio**p - 1.0)
    return RadiationExtraction(limit, p, True, vals)


def residual_scan(app, q, r_list, grid=None):
    """Rows ``(t, r, q, l_slice, |res_phi|, |res_a0..3|, envelope)`` at fixed q.

    The sup is taken over the collocation nodes of ``grid``; the envelope is
    ``ln r / r^3``.
    """
    grid = grid or app.grid_for()
    rows = []
    for r in r_list:
        t = r - q
        rp, ra = app.residual_on_grid(t, np.array([r]), grid)
        rows.append([t, r, q, grid.l_max, float(np.abs(rp).max())]
                    + [float(np.abs(ra[k]).max()) for k in range(4)] + [np.log(r) / r**3])
    return np.array(rows)
