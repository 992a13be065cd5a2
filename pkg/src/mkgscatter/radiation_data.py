"""Scattering data at null infinity: validation, charge, current, gauge constraint.

A :class:`RadiationFieldSet` holds the complex radiation field ``Phi(q, omega)``
and the real potentials ``calA_alpha(q, omega)`` as real spherical-harmonic
coefficients on a uniform grid in the retarded coordinate ``q = r - t``.
In memory the fields carry their physical amplitude; files store them divided
by ``eps``.
"""

import hashlib
import io
import itertools
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import sphere
from .geometry import CutoffFamily, diff1, japan

FORMAT = "mkg-radiation-v1"


class ConstraintViolation(ValueError):
    """The asymptotic gauge condition does not hold for the data."""


class AsymptoticBlowup(RuntimeError):
    """Growth of the asymptotic system discretization beyond its envelope."""


@dataclass(frozen=True)
class RadiationFieldSet:
    q: np.ndarray
    phi: np.ndarray
    a: np.ndarray
    gamma: float = 0.9
    mu: float = 0.05
    order: int = 7
    eps: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=complex))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        validate_parameters(self.gamma, self.mu, self.order)
        if q.ndim != 1 or q.size < 6 or np.any(np.diff(q) <= 0):
            raise ValueError("q grid must be strictly increasing with at least 6 samples")
        if not np.allclose(np.diff(q), q[1] - q[0], rtol=1e-9, atol=0):
            raise ValueError("q grid must be uniform")
        n = self.phi.shape[-1]
        if self.phi.shape != (q.size, n) or self.a.shape != (4, q.size, n):
            raise ValueError("coefficient arrays do not match the q grid")
        if sphere.n_modes(self.l_max) != n:
            raise ValueError("coefficient count is not a full band")

    @property
    def l_max(self):
        return int(round(np.sqrt(self.phi.shape[-1]))) - 1

    @property
    def dq(self):
        return float(self.q[1] - self.q[0])

    def with_band(self, l_new):
        return replace(self, phi=sphere.pad_band(self.phi, l_new), a=sphere.pad_band(self.a, l_new))

    def scaled(self, c):
        return replace(self, phi=c * self.phi, a=c * self.a)

    def tail_check(self, fraction=0.1):
        """Tail samples bounded by ``2 * eps * <q>^-gamma`` on both ends."""
        grid = sphere.cached_grid(self.l_max, self.l_max)
        n_tail = max(1, int(fraction * self.q.size))
        idx = np.r_[np.arange(n_tail), np.arange(self.q.size - n_tail, self.q.size)]
        bound = 2.0 * abs(self.eps) * japan(self.q[idx]) ** (-self.gamma)
        vals = [np.abs(grid.synthesize(self.phi[idx]))]
        vals += [np.abs(grid.synthesize(self.a[k, idx])) for k in range(4)]
        return bool(all(np.all(v.max(axis=-1) <= bound) for v in vals))


def validate_parameters(gamma, mu, order=7):
    if not 0.5 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (1/2, 1), got {gamma}")
    if not 0.0 < mu < gamma - 0.5:
        raise ValueError(f"mu must lie in (0, gamma - 1/2), got {mu}")
    if order < 7:
        raise ValueError(f"vector-field order must be at least 7, got {order}")


def zero_data(l_max=8, Q=40.0, n_q=2048, **kw):
    q = np.linspace(-Q, Q, n_q)
    n = sphere.n_modes(l_max)
    return RadiationFieldSet(q, np.zeros((n_q, n), complex), np.zeros((4, n_q, n)), **kw)


def from_samples(q, phi_fn, a_fns=None, l_max=8, **kw):
    """Build data by projecting callables ``f(q[:, None], omega[None])`` onto
    the harmonics (exact for band-limited angular dependence)."""
    grid = sphere.cached_grid(l_max)
    q = np.asarray(q, dtype=float)
    phi = grid.analyze(np.asarray(phi_fn(q[:, None], grid.omega[None]), dtype=complex)
                       * np.ones((q.size, grid.n_points)))
    a = np.zeros((4, q.size, sphere.n_modes(l_max)))
    for k, fn in enumerate(a_fns or ()):
        if fn is not None:
            a[k] = grid.analyze(np.asarray(fn(q[:, None], grid.omega[None]), dtype=float)
                                * np.ones((q.size, grid.n_points)))
    return RadiationFieldSet(q, phi, a, **kw)


# --- norm --------------------------------------------------------------------

def min_samples_for_order(k):
    return 6 + 5 * k


def evaluate_norm(data, k, gamma=None, reduction="max"):
    """Weighted sup-norm of all five fields.

    Computes ``<q>^gamma |(<q> d_q)^j Omega^beta F|`` on the (q, collocation)
    grid for every ``j + |beta| <= k``; ``Omega^beta`` runs over ordered
    products of the rotation fields.  ``reduction="max"`` returns the largest
    value, ``"sum"`` adds the sup of each term instead.
    """
    gamma = data.gamma if gamma is None else gamma
    need = min_samples_for_order(k)
    if data.q.size < need:
        raise ValueError(f"order-{k} stencils need n_q >= {need}, grid has {data.q.size}")
    if k > data.order:
        raise ValueError(f"order {k} exceeds the data's vector-field order {data.order}")
    grid = sphere.cached_grid(data.l_max, data.l_max)
    W = sphere.rotation_generators(data.l_max)
    gens = [W[0, 1], W[0, 2], W[1, 2]]
    wq = japan(data.q)[:, None]
    weight = japan(data.q)[:, None] ** gamma
    fields = [data.phi] + [data.a[i] for i in range(4)]
    total = 0.0
    for F in fields:
        for nb in range(k + 1):
            for beta in itertools.product(range(3), repeat=nb):
                c = F
                for b in beta:
                    c = c @ gens[b].T
                for j in range(k - nb + 1):
                    if j:
                        c = wq * diff1(c, data.dq, axis=0)
                    val = float(np.max(weight * np.abs(grid.synthesize(c))))
                    total = max(total, val) if reduction == "max" else total + val
    return total


# --- current and charge ------------------------------------------------------

@dataclass(frozen=True)
class CurrentProfile:
    """``J_alpha = L_alpha(omega) * Jt(q, omega)`` with ``L_alpha = (-1, omega)``.

    ``jt`` holds the coefficients of the scalar profile ``Im(Phi d_q conj Phi)``.
    """

    q: np.ndarray
    jt: np.ndarray

    @property
    def l_max(self):
        return int(round(np.sqrt(self.jt.shape[-1]))) - 1

    def coeffs(self):
        """Mode coefficients of ``J_alpha``, shape ``(4, n_q, n_modes(l_max + 1))``."""
        M = sphere.multiplication_by_omega(self.l_max)
        out = np.zeros((4, self.q.size, sphere.n_modes(self.l_max + 1)))
        out[0] = -sphere.pad_band(self.jt, self.l_max + 1)
        for i in range(3):
            out[i + 1] = self.jt @ M[i].T
        return out

    def values(self, grid):
        """Point values on ``grid``: shape ``(4, n_q, n_points)``."""
        jt = grid.synthesize(sphere.pad_band(self.jt, grid.l_max))
        L_low = np.concatenate([-np.ones((1, grid.n_points)), grid.omega.T])
        return L_low[:, None, :] * jt[None]


def phi_q_derivative(data):
    return diff1(data.phi, data.dq, axis=0)


def compute_current(data):
    band = sphere.band_of(data.phi)
    lj = 2 * band
    grid = sphere.cached_grid(lj, 2 * band)
    phi = grid.synthesize(sphere.pad_band(data.phi, lj))
    dphi = grid.synthesize(sphere.pad_band(phi_q_derivative(data), lj))
    jt = grid.analyze(np.imag(phi * np.conj(dphi)))
    return CurrentProfile(data.q, jt)


def q_integral(values, q):
    return simpson(values, x=q, axis=0)


def compute_charge(data, current=None):
    """``q = int int -Im(Phi d_q conj Phi) dS dq``."""
    current = compute_current(data) if current is None else current
    sphere_mean = np.sqrt(4 * np.pi) * current.jt[:, 0]
    return float(-q_integral(sphere_mean, data.q))


# --- gauge constraint --------------------------------------------------------

def gauge_target(q, charge, cutoffs):
    """``L^alpha calA_alpha`` required by the asymptotic Lorenz condition."""
    q = np.asarray(q, dtype=float)
    k = charge / (4 * np.pi)
    return np.where(q < 0.0, k * (1.0 - cutoffs.chi_in(q)), k * (1.0 - cutoffs.chi_ex(q)))


def l_component(data):
    """Coefficients of ``A_L = calA_0 + omega_i calA_i`` (band ``l_max + 1``)."""
    M = sphere.multiplication_by_omega(data.l_max)
    out = sphere.pad_band(data.a[0], data.l_max + 1)
    for i in range(3):
        out = out + data.a[i + 1] @ M[i].T
    return out


def gauge_residual(data, charge=None, cutoffs=None):
    """``sup |d_q (L^a calA_a + (q/4pi) chi_in + (q/4pi) chi_ex)|`` over the grid."""
    cutoffs = cutoffs or CutoffFamily()
    charge = compute_charge(data) if charge is None else charge
    lb = data.l_max + 1
    grid = sphere.cached_grid(lb, lb)
    k = charge / (4 * np.pi)
    g = grid.synthesize(l_component(data))
    g = g + (k * (cutoffs.chi_in(data.q) + cutoffs.chi_ex(data.q)))[:, None]
    return float(np.max(np.abs(diff1(g, data.dq, axis=0))))


def solve_gauge_constraint(data, charge=None, cutoffs=None, verify=False, tol=None):
    """Overwrite the L-component of ``calA`` with the constrained profile.

    The update ``calA_a += (Lbar_a / 2) (A_L - target)`` changes ``A_L`` only:
    ``L^a Lbar_a = -2`` while ``Lbar`` and the sphere tangents are orthogonal
    to ``Lbar_a``.  The band limit grows by at most two so that the result is
    exact; with ``verify=True`` only the residual is returned.
    """
    cutoffs = cutoffs or CutoffFamily()
    charge = compute_charge(data) if charge is None else charge
    if verify:
        return gauge_residual(data, charge, cutoffs)
    target = gauge_target(data.q, charge, cutoffs)
    diff = l_component(data)
    diff[:, 0] -= np.sqrt(4 * np.pi) * target
    band = sphere.band_of(diff)
    l_out = max(data.l_max, band + 1)
    M = sphere.multiplication_by_omega(l_out - 1)
    d = sphere.pad_band(diff, l_out - 1)
    a = np.zeros((4, data.q.size, sphere.n_modes(l_out)))
    a[:, :, : data.a.shape[-1]] = data.a
    a[0] -= 0.5 * sphere.pad_band(d, l_out)
    for i in range(3):
        a[i + 1] -= 0.5 * (d @ M[i].T)
    out = replace(data, phi=sphere.pad_band(data.phi, l_out), a=a)
    residual = gauge_residual(out, charge, cutoffs)
    tol = gauge_tolerance(charge) if tol is None else tol
    if residual > tol:
        raise ConstraintViolation(f"gauge residual {residual:.3e} exceeds {tol:.3e}")
    return out


def gauge_tolerance(charge):
    return 1e-10 * abs(charge) + 1e-12


# --- asymptotic system -------------------------------------------------------

@dataclass
class AsymptoticState:
    """Pointwise-in-omega profiles on a (q, collocation node) grid."""

    q: np.ndarray
    omega: np.ndarray
    Phi0: np.ndarray
    calA: np.ndarray
    s: float = 0.0

    @classmethod
    def from_data(cls, data, grid=None):
        grid = grid or sphere.cached_grid(data.l_max)
        phi = grid.synthesize(data.phi)
        calA = np.stack([grid.synthesize(data.a[k]) for k in range(4)])
        return cls(data.q.copy(), grid.omega.copy(), phi, calA, 0.0)

    def A_L(self):
        return self.calA[0] + np.einsum("pi,iqp->qp", self.omega, self.calA[1:])


def _recover(base, dbase, dnew, q):
    """Profile from its q-derivative, integrating the change from the left end."""
    d = dnew - dbase
    # cumulative_simpson casts complex input to real
    out = cumulative_simpson(d.real, x=q, axis=0, initial=0.0)
    if np.iscomplexobj(d):
        out = out + 1j * cumulative_simpson(d.imag, x=q, axis=0, initial=0.0)
    return base + out


def evolve_asymptotic_system(state, s_end, dq=None, ds=0.01):
    """RK4 in slow time on ``(d_q Phi0, d_q calA)``.

    ``d_s d_q calA_a = -(L_a/2) Im(Phi0 d_q conj Phi0)`` and
    ``d_s d_q Phi0 = -i A_L d_q Phi0``; profiles are rebuilt by q-integration.
    """
    q = state.q
    h = q[1] - q[0]
    if dq is not None and not np.isclose(dq, h, rtol=1e-9):
        raise ValueError(f"dq={dq} does not match the state grid spacing {h}")
    L_low = np.concatenate([-np.ones((1, state.omega.shape[0])), state.omega.T])
    p0 = diff1(state.Phi0, h, axis=0)
    B0 = diff1(state.calA, h, axis=1)
    Phi_base, A_base = state.Phi0, state.calA

    def fields(p, B):
        Phi = _recover(Phi_base, p0, p, q)
        A = np.stack([_recover(A_base[k], B0[k], B[k], q) for k in range(4)])
        return Phi, A

    def rhs(p, B):
        Phi, A = fields(p, B)
        A_L = A[0] + np.einsum("pi,iqp->qp", state.omega, A[1:])
        src = np.imag(Phi * np.conj(p))
        return -1j * A_L * p, -0.5 * L_low[:, None, :] * src[None]

    size0 = np.abs(p0).max() + np.abs(B0).max()
    C = 10.0 * (np.abs(state.Phi0).max() + np.abs(p0).max() + np.abs(state.calA).max())
    p, B = p0.copy(), B0.copy()
    s = state.s
    n_steps = max(1, int(np.ceil((s_end - s) / ds - 1e-12)))
    step = (s_end - s) / n_steps
    for _ in range(n_steps):
        k1 = rhs(p, B)
        k2 = rhs(p + 0.5 * step * k1[0], B + 0.5 * step * k1[1])
        k3 = rhs(p + 0.5 * step * k2[0], B + 0.5 * step * k2[1])
        k4 = rhs(p + step * k3[0], B + step * k3[1])
        p = p + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        B = B + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        s += step
        size = np.abs(p).max() + np.abs(B).max()
        if size > size0 * np.exp(C * (s - state.s)) * (1 + 1e-10) + 1e-300:
            raise AsymptoticBlowup(f"growth {size:.3e} beyond envelope at s={s:.4f}")
    Phi, A = fields(p, B)
    return AsymptoticState(q, state.omega, Phi, A, s)


# --- synthetic data ----------------------------------------------------------

def synthetic_data(seed=0, l_max=8, eps=1e-2, gamma=0.9, mu=0.05, order=7, Q=40.0,
                   n_q=2048, phi_band=None, a_band=None, n_packets=3, cutoffs=None):
    """Deterministic Gaussian-packet data satisfying the asymptotic gauge condition.

    ``Phi`` uses degrees ``<= phi_band``; the free potentials use degrees
    ``<= a_band`` (default ``l_max - 2``) so that the constrained result fits
    in ``l_max``.
    """
    validate_parameters(gamma, mu, order)
    rng = np.random.default_rng(seed)
    phi_band = l_max if phi_band is None else phi_band
    a_band = max(l_max - 2, 0) if a_band is None else a_band
    if a_band > l_max - 2:
        raise ValueError("free potentials need a_band <= l_max - 2")
    q = np.linspace(-Q, Q, n_q)
    n = sphere.n_modes(l_max)
    phi = np.zeros((n_q, n), complex)
    a = np.zeros((4, n_q, n))
    ls, _ = sphere.mode_labels(l_max)
    for _ in range(n_packets):
        centre = rng.uniform(-4.0, 4.0)
        width = rng.uniform(0.8, 2.0)
        freq = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
        env = np.exp(-0.5 * ((q - centre) / width) ** 2) * np.exp(-1j * freq * q)
        amp = rng.normal(size=n) + 1j * rng.normal(size=n)
        amp[ls > phi_band] = 0.0
        amp /= 1.0 + ls
        phi += env[:, None] * amp[None, :] / n_packets
        for k in range(4):
            centre = rng.uniform(-4.0, 4.0)
            width = rng.uniform(0.8, 2.0)
            amp = rng.normal(size=n)
            amp[ls > a_band] = 0.0
            amp /= 1.0 + ls
            a[k] += np.exp(-0.5 * ((q - centre) / width) ** 2)[:, None] * amp[None] / n_packets
    data = RadiationFieldSet(q, eps * phi, eps * a, gamma, mu, order, eps)
    if eps == 0.0:
        return data
    return solve_gauge_constraint(data, cutoffs=cutoffs).with_band(l_max)


# --- file format -------------------------------------------------------------

def _header(data):
    return {"format": FORMAT, "gamma": data.gamma, "mu": data.mu, "order": data.order,
            "eps": data.eps, "l_max": data.l_max, "q_min": float(data.q[0]),
            "q_max": float(data.q[-1]), "n_q": int(data.q.size)}


def to_bytes(data):
    scale = 1.0 / data.eps if data.eps != 0.0 else 0.0
    block = np.concatenate([data.phi.real[None], data.phi.imag[None], data.a]) * scale
    head = json.dumps(_header(data), sort_keys=True).encode() + b"\n"
    return head + block.astype("<f8").tobytes()


def from_bytes(raw):
    buf = io.BytesIO(raw)
    header = json.loads(buf.readline())
    if header.get("format") != FORMAT:
        raise ValueError("not a radiation data file")
    n_q, l_max = header["n_q"], header["l_max"]
    block = np.frombuffer(buf.read(), dtype="<f8").reshape(6, n_q, sphere.n_modes(l_max))
    block = block * header["eps"]
    q = np.linspace(header["q_min"], header["q_max"], n_q)
    return RadiationFieldSet(q, block[0] + 1j * block[1], block[2:].copy(), header["gamma"],
                             header["mu"], header["order"], header["eps"])


def save(path, data):
    raw = to_bytes(data)
    with open(path, "wb") as fh:
        fh.write(raw)
    return hashlib.sha256(raw).hexdigest()


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def data_hash(data):
    return hashlib.sha256(to_bytes(data)).hexdigest()
