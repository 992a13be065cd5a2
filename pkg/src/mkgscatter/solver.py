"""Backward integration of the cutoff remainder system.

Unknowns are complex ``u`` and real ``v_a`` expanded in real harmonics, each
mode stored as ``h = r f``.  With ``tau = 2T - t`` the system becomes forward
in ``tau``:

    h_tautau = h_rr - l(l+1) h / r^2 - r S_lm,      Box f = S,

where ``S`` is the cutoff source evaluated on a dealiased collocation grid.
State arrays have shape ``(n_r + 1, 6, n_modes)`` with field slots
``(Re u, Im u, v_0, v_1, v_2, v_3)``.
"""

from dataclasses import dataclass, field
import hashlib
import json
import time
import warnings

import numpy as np

from . import sphere
from .approx import build_approximate, current_J, nonlinear_phi
from .geometry import CutoffFamily, SampledField, Weight
from .radiation_data import data_hash

N_FIELDS = 6
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class CFLViolation(ValueError):
    """Time step exceeds half the radial spacing or the grid is inconsistent."""


class SupportViolation(RuntimeError):
    """Remainder found outside ``r <= 6T - t``."""


class NumericalAbort(RuntimeError):
    """Non-finite state or energy blow-up; carries the last good checkpoint."""

    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass(frozen=True)
class SolverGrid:
    T: float
    dr: float = 0.25
    l_max: int = 4
    cfl: float = 0.5

    def __post_init__(self):
        if self.T <= 0 or self.dr <= 0:
            raise CFLViolation("T and dr must be positive")
        if self.cfl > 0.5 + 1e-12:
            raise CFLViolation(f"cfl {self.cfl} exceeds 0.5")
        if self.cfl > self.stable_cfl(self.l_max) + 1e-12:
            raise CFLViolation(f"cfl {self.cfl} exceeds the RK4 limit "
                               f"{self.stable_cfl(self.l_max):.3f} for l_max = {self.l_max}")
        if abs(self.r_max / self.dr - round(self.r_max / self.dr)) > 1e-9:
            raise CFLViolation("6T must be a whole number of radial cells")
        if abs(2 * self.T / self.dt - round(2 * self.T / self.dt)) > 1e-9:
            raise CFLViolation("2T must be a whole number of time steps")

    @staticmethod
    def stable_cfl(l_max):
        """RK4 bound ``dt |lambda| <= 2 sqrt 2`` with the fourth-order stencil
        symbol ``16/3`` plus the centrifugal term at the first node."""
        return 2.0 * np.sqrt(2.0) / np.sqrt(16.0 / 3.0 + l_max * (l_max + 1))

    @classmethod
    def from_n_r(cls, T, n_r, l_max=4, cfl=0.5):
        return cls(float(T), 6.0 * T / n_r, l_max, cfl)

    @property
    def r_max(self):
        return 6.0 * self.T

    @property
    def n_r(self):
        return int(round(self.r_max / self.dr))

    @property
    def dt(self):
        return self.cfl * self.dr

    @property
    def n_steps(self):
        return int(round(2 * self.T / self.dt))

    @property
    def r(self):
        return np.arange(self.n_r + 1) * self.dr

    def describe(self):
        return {"T": self.T, "dr": self.dr, "l_max": self.l_max, "cfl": self.cfl,
                "n_r": self.n_r, "dt": self.dt, "r_max": self.r_max}


def mode_parity(l_max):
    """Reflection parity of ``h = r f`` per mode: ``(-1)^(l+1)``."""
    ls = sphere.mode_labels(l_max)[0]
    return np.where(ls % 2 == 0, -1.0, 1.0)


def _ghosted(h, parity):
    """Two mirror ghosts at the axis, two zero ghosts beyond ``r_max``."""
    left = np.stack([h[2], h[1]]) * parity
    zero = np.zeros((2,) + h.shape[1:], h.dtype)
    return np.concatenate([left, h, zero], axis=0)


def radial_laplacian(h, dr, parity):
    g = _ghosted(h, parity)
    n = h.shape[0]
    return sum(c * g[k:k + n] for k, c in enumerate(_D2)) / dr**2


def radial_gradient(h, dr, parity):
    g = _ghosted(h, parity)
    n = h.shape[0]
    return sum(c * g[k:k + n] for k, c in enumerate(_D1) if c) / dr


def profile_from_h(h, dr, parity, ls):
    """``f = h / r`` with the regular axis limit (``h'(0)`` for l = 0, else 0)."""
    r = np.arange(h.shape[0]) * dr
    f = np.empty_like(h)
    f[1:] = h[1:] / r[1:].reshape((-1,) + (1,) * (h.ndim - 1))
    slope = radial_gradient(h[:8], dr, parity)[0]
    f[0] = np.where(ls == 0, slope, 0.0)
    return f


@dataclass
class RemainderState:
    """``h`` and ``k = d_tau h`` at time ``t``."""

    t: float
    h: np.ndarray
    k: np.ndarray

    @classmethod
    def zero(cls, grid):
        shape = (grid.n_r + 1, N_FIELDS, sphere.n_modes(grid.l_max))
        return cls(2.0 * grid.T, np.zeros(shape), np.zeros(shape))

    def copy(self):
        return RemainderState(self.t, self.h.copy(), self.k.copy())

    def profiles(self, grid):
        """``(u, v)``: complex ``(n_r+1, n_modes)`` and real ``(4, n_r+1, n_modes)``."""
        ls = sphere.mode_labels(grid.l_max)[0]
        f = profile_from_h(self.h, grid.dr, mode_parity(grid.l_max), ls)
        return f[:, 0] + 1j * f[:, 1], np.moveaxis(f[:, 2:], 1, 0)

    def time_derivatives(self, grid):
        """``d_t (u, v)`` (note ``d_t = -d_tau``)."""
        ls = sphere.mode_labels(grid.l_max)[0]
        f = -profile_from_h(self.k, grid.dr, mode_parity(grid.l_max), ls)
        return f[:, 0] + 1j * f[:, 1], np.moveaxis(f[:, 2:], 1, 0)


class RemainderSystem:
    """Right-hand side of the cutoff remainder system for one horizon ``T``."""

    def __init__(self, app, grid, cutoffs=None):
        self.app = app
        self.grid = grid
        self.cutoffs = cutoffs or app.cutoffs
        band = max(grid.l_max, app.l_phi, app.l_A)
        # cubic nonlinearities: exact projection of degree-3*band products
        self.sph = sphere.cached_grid(band, 3 * band)
        self.n_modes = sphere.n_modes(grid.l_max)
        self.ls = sphere.mode_labels(grid.l_max)[0].astype(float)
        self.parity = mode_parity(grid.l_max)
        self.r_in = grid.r[1:]
        self._cache = {}

    def app_fields(self, t):
        key = float(t)
        if key not in self._cache:
            if len(self._cache) >= 3:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = self.app.fields_on_grid(t, self.r_in, self.sph)
        return self._cache[key]

    def remainder_on_grid(self, h, k):
        """Values of ``u``, ``d_a u`` and ``v_a`` on ``(r_j >= dr, nodes)``."""
        g = self.sph
        L = g.l_max
        r = self.r_in[:, None]
        hr = radial_gradient(h, self.grid.dr, self.parity)[1:]
        hi, ki = h[1:], k[1:]
        cu = lambda a: sphere.pad_band(a[:, 0] + 1j * a[:, 1], L)
        f = cu(hi) / r
        u = g.synthesize(f)
        du = np.empty((4,) + u.shape, complex)
        du[0] = -g.synthesize(cu(ki) / r)
        dur = g.synthesize((cu(hr) - cu(hi) / r) / r)
        ang = g.gradient(f) / r[None]
        for i in range(3):
            du[i + 1] = g.omega[:, i] * dur + ang[i]
        v = np.stack([g.synthesize(sphere.pad_band(hi[:, 2 + a], L) / r) for a in range(4)])
        return u, du, v

    def sources(self, t, h, k):
        """Mode coefficients of ``S`` with ``Box (u, v) = S``; shape ``(n_r, 6, n_modes)``."""
        out = np.zeros((self.r_in.size, N_FIELDS, self.n_modes))
        cut = float(self.cutoffs.chi_tilde(np.array(t / self.grid.T)))
        if cut == 0.0:
            return out
        A = self.app_fields(t)
        u, du, v = self.remainder_on_grid(h, k)
        phi = A["phi"] + u
        dphi = A["dphi"] + du
        pot = A["A"] + v
        s_u = cut * (nonlinear_phi(phi, dphi, pot) - A["box_phi"])
        s_v = cut * (-current_J(phi, dphi, pot) - A["box_A"])
        n = self.n_modes
        su = self.sph.analyze(s_u)[:, :n]
        out[:, 0] = su.real
        out[:, 1] = su.imag
        out[:, 2:] = np.moveaxis(self.sph.analyze(s_v)[..., :n], 0, 1)
        return out

    def rhs(self, t, h, k):
        """``(d_tau h, d_tau k)``."""
        lap = radial_laplacian(h, self.grid.dr, self.parity)
        dk = np.zeros_like(h)
        r = self.r_in[:, None, None]
        dk[1:] = lap[1:] - self.ls * (self.ls + 1) * h[1:] / r**2 - r * self.sources(t, h, k)
        dh = k.copy()
        dh[0] = 0.0
        return dh, dk


def rhs(state, app, grid):
    """Time derivative (in ``tau``) of a :class:`RemainderState`."""
    return RemainderSystem(app, grid).rhs(state.t, state.h, state.k)


@dataclass
class Window:
    """Consecutive time levels around ``t``, used to apply vector fields.

    The remainder profiles are stored as ``f_lm`` (not ``h``), ascending in t.
    """

    t: float
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def field(self, r, which="u"):
        """:class:`SampledField` for ``u`` or ``v0..v3``."""
        c = self.u if which == "u" else self.v[int(which[1])]
        return SampledField(self.times, r, c)

    @property
    def centre(self):
        return int(np.argmin(np.abs(self.times - self.t)))


@dataclass
class SolveResult:
    grid: SolverGrid
    data_hash: str
    eps: float
    checkpoints: list
    windows: dict = field(default_factory=dict)
    support_max: float = 0.0
    imag_leak: float = 0.0
    steps: int = 0
    wall_time: float = 0.0

    @property
    def times(self):
        return np.array([c.t for c in self.checkpoints])

    def profiles(self, i):
        return self.checkpoints[i].profiles(self.grid)

    def weighted_l2(self, weight=None, fields="u"):
        """``||w^(1/2) u(t)||_{L^2}`` (or the ``v`` sum) per checkpoint."""
        weight = weight or Weight(0.9, 0.05)
        r = self.grid.r
        out = []
        for c in self.checkpoints:
            u, v = c.profiles(self.grid)
            w = weight(r - c.t) * r**2
            if fields == "u":
                dens = np.sum(np.abs(u) ** 2, axis=-1)
            else:
                dens = np.sum(v**2, axis=(0, -1))
            out.append(np.sqrt(_simpson(dens * w, self.grid.dr)))
        return np.array(out)


def _simpson(y, h):
    from scipy.integrate import simpson
    return float(simpson(y, dx=h, axis=0))


def _support_excess(state, grid):
    """Largest ``|f|`` beyond ``r = 6T - t``."""
    edge = 6.0 * grid.T - state.t
    mask = grid.r > edge + 1e-12
    if not np.any(mask):
        return 0.0
    u, v = state.profiles(grid)
    return float(max(np.abs(u[mask]).max(), np.abs(v[:, mask]).max()))


def _window_levels(grid, window_times, half=3):
    """Map step index -> list of window times that need that level."""
    need = {}
    for tw in window_times:
        n_c = int(round((2 * grid.T - tw) / grid.dt))
        if abs((2 * grid.T - tw) / grid.dt - n_c) > 1e-9:
            raise ValueError(f"window time {tw} is not on the time lattice")
        lo, hi = max(n_c - half, 0), min(n_c + half, grid.n_steps)
        for n in range(lo, hi + 1):
            need.setdefault(n, []).append(float(tw))
    return need


def solve_backward(data, T=None, grid=None, app=None, checkpoint_dt=1.0, window_times=(),
                   eps_threshold=0.05, energy_limit=1e3, support_tol=1e-12, resume=None,
                   progress=None):
    """Integrate from zero data at ``t = 2T`` down to ``t = 0``.

    Returns a :class:`SolveResult` with one :class:`RemainderState` every
    ``checkpoint_dt`` (ascending in t) and a :class:`Window` of seven
    consecutive time levels around each requested ``window_times`` entry.
    """
    start = time.perf_counter()
    grid = grid or SolverGrid(float(T))
    app = app or build_approximate(data)
    eps = float(data.eps)
    if eps > eps_threshold:
        warnings.warn(f"eps = {eps} above {eps_threshold}: outside the small-data regime")
    system = RemainderSystem(app, grid)
    state = resume.copy() if resume is not None else RemainderState.zero(grid)
    n0 = int(round((2 * grid.T - state.t) / grid.dt))
    every = max(int(round(checkpoint_dt / grid.dt)), 1)
    need = _window_levels(grid, window_times)
    levels = {}
    checkpoints = []
    support = 0.0
    leak = 0.0
    limit = energy_limit * max(eps, 1e-300) ** 2
    weight = Weight(data.gamma, data.mu)
    dt = grid.dt

    def record(n, st):
        if n in need:
            u, v = st.profiles(grid)
            levels[n] = (st.t, u, v)

    def l2(st):
        u, v = st.profiles(grid)
        w = weight(grid.r - st.t) * grid.r**2
        return _simpson((np.sum(np.abs(u) ** 2, -1) + np.sum(v**2, axis=(0, -1))) * w, grid.dr)

    record(n0, state)
    checkpoints.append(state.copy())
    for n in range(n0, grid.n_steps):
        tau = 2 * grid.T - state.t
        t = state.t
        k1 = system.rhs(t, state.h, state.k)
        k2 = system.rhs(t - dt / 2, state.h + dt / 2 * k1[0], state.k + dt / 2 * k1[1])
        k3 = system.rhs(t - dt / 2, state.h + dt / 2 * k2[0], state.k + dt / 2 * k2[1])
        k4 = system.rhs(t - dt, state.h + dt * k3[0], state.k + dt * k3[1])
        h = state.h + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        k = state.k + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        new = RemainderState(2 * grid.T - (tau + dt), h, k)
        if (n + 1) == grid.n_steps:
            new.t = 0.0
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(k))):
            raise NumericalAbort(f"non-finite state at t = {new.t}", checkpoints[-1])
        state = new
        record(n + 1, state)
        if (n + 1 - n0) % every == 0 or n + 1 == grid.n_steps:
            exc = _support_excess(state, grid)
            support = max(support, exc)
            if exc > support_tol * max(eps, 1e-300):
                raise SupportViolation(f"remainder {exc:.3e} beyond r = 6T - t at t = {state.t}")
            if l2(state) > limit and eps > 0:
                raise NumericalAbort(f"energy blow-up at t = {state.t}", checkpoints[-1])
            checkpoints.append(state.copy())
            if progress:
                progress(state.t)
    checkpoints.reverse()
    windows = {}
    by_time = {}
    for n, (t, u, v) in levels.items():
        for tw in need[n]:
            by_time.setdefault(tw, []).append((t, u, v))
    for tw, items in by_time.items():
        items.sort(key=lambda x: x[0])
        windows[tw] = Window(tw, np.array([x[0] for x in items]),
                             np.stack([x[1] for x in items]), np.stack([x[2] for x in items], axis=1))
    return SolveResult(grid, data_hash(data), eps, checkpoints, windows, support, leak,
                       grid.n_steps - n0, time.perf_counter() - start)


# --- checkpoint files --------------------------------------------------------

CHECKPOINT_FORMAT = "mkg-remainder-v1"


def checkpoint_bytes(state, grid, dhash):
    header = {"format": CHECKPOINT_FORMAT, "t": state.t, "grid": grid.describe(),
              "data_hash": dhash, "shape": list(state.h.shape)}
    blob = np.stack([state.h, state.k]).astype("<f8").tobytes()
    return json.dumps(header, sort_keys=True).encode() + b"\n" + blob


def save_checkpoint(path, state, grid, dhash):
    raw = checkpoint_bytes(state, grid, dhash)
    with open(path, "wb") as fh:
        fh.write(raw)
    return hashlib.sha256(raw).hexdigest()


def load_checkpoint(path):
    """Returns ``(state, grid, data_hash)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head, blob = raw.split(b"\n", 1)
    header = json.loads(head)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a remainder checkpoint")
    g = header["grid"]
    grid = SolverGrid(g["T"], g["dr"], g["l_max"], g["cfl"])
    arr = np.frombuffer(blob, dtype="<f8").reshape([2] + header["shape"])
    return RemainderState(header["t"], arr[0].copy(), arr[1].copy()), grid, header["data_hash"]


# --- T -> infinity study -----------------------------------------------------

@dataclass
class CauchyRow:
    T1: float
    T2: float
    diff_u: float
    diff_v: float
    ratio: float
    predicted_ratio: float
    flagged: bool


def zi_weighted_norm(window, r, t_weight, weight, which, max_order=1, other=None):
    """``sum_{|I| <= max_order} ||w^(1/2) Z^I f||`` at the window centre.

    ``other`` (a window of a different run with a shorter radial lattice) is
    subtracted after zero-padding; beyond its lattice the other run vanishes.
    """
    from .geometry import multi_indices, VectorFieldId
    f = window.field(r, which)
    if other is not None:
        g = other.field(other_r(other, r), which).coeffs
        pad = np.zeros_like(f.coeffs)
        pad[:, : g.shape[1]] = g
        f = SampledField(f.t, f.r, f.coeffs - pad)
    k = window.centre
    w = weight(r - t_weight) * r**2
    dr = r[1] - r[0]
    total = 0.0
    for I in multi_indices(max_order):
        z = f.apply_multi(VectorFieldId(I)) if I else f
        dens = np.sum(np.abs(z.coeffs[k]) ** 2, axis=-1)
        total += np.sqrt(max(_simpson(dens * w, dr), 0.0))
    return total


def other_r(window, r_full):
    n = window.u.shape[1]
    return r_full[:n]


def cauchy_study(data, T_list, dr=0.25, l_max=4, window_step=None, max_order=1):
    """Differences of remainders for consecutive horizons on a common lattice."""
    T_list = sorted(float(T) for T in T_list)
    if len(T_list) < 3:
        raise ValueError("cauchy_study needs at least three horizons")
    T_min = T_list[0]
    step = window_step or T_min / 4
    # windows up to the largest T1; each run only keeps those with a full
    # stencil of levels inside its own [0, 2T]
    window_times = [float(x) for x in np.arange(step, T_list[-2] + 1e-9, step)]
    app = build_approximate(data)
    runs = {}
    for T in T_list:
        g = SolverGrid(T, dr, l_max)
        inside = [tw for tw in window_times if 3 * g.dt - 1e-9 <= tw <= 2 * T - 3 * g.dt + 1e-9]
        runs[T] = solve_backward(data, grid=g, app=app, checkpoint_dt=max(T_min / 4, g.dt),
                                 window_times=inside)
    weight = Weight(data.gamma, data.mu)
    rows = []
    prev = None
    for T1, T2 in zip(T_list[:-1], T_list[1:]):
        big, small = runs[T2], runs[T1]
        r = big.grid.r
        du = dv = 0.0
        for tw in window_times:
            if tw > T1 + 1e-9 or tw not in small.windows:
                continue
            wb, ws = big.windows[tw], small.windows[tw]
            du = max(du, zi_weighted_norm(wb, r, tw, weight, "u", max_order, ws))
            dv = max(dv, sum(zi_weighted_norm(wb, r, tw, weight, f"v{a}", max_order, ws)
                             for a in range(4)))
        total = du + dv
        predicted = 2.0 ** ((data.gamma - data.mu - 0.5) / 2)
        ratio = prev / total if prev and total > 0 else np.nan
        flagged = bool(prev is not None and total > 1.2 * prev)
        rows.append(CauchyRow(T1, T2, du, dv, ratio, predicted, flagged))
        prev = total
    return rows, runs
