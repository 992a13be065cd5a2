"""Weighted conformal energies, the energy identity, Hardy and Klainerman-Sobolev
checks, decay fits and the Lorenz-gauge monitor.

Slices are handled in mode space: ``h_lm(r) = r f_lm(r)`` and its time
derivative on a uniform radial lattice starting at ``r = 0``.  Angular
integrals are exact (``int |dslash f|^2 dS = sum l(l+1) |f_lm|^2 / r^2``) and
radial integrals use Simpson's rule.
"""

from dataclasses import dataclass, field, asdict
import csv
import hashlib
import io
import json
import warnings

import numpy as np
from scipy import stats
from scipy.integrate import simpson, trapezoid

from . import sphere
from .geometry import (SampledField, UnitWeight, VectorFieldId, Weight, diff1, japan,
                       multi_indices, radial_diff1, radial_diff2)


def _parity_h(l_max):
    ls = sphere.mode_labels(l_max)[0]
    return np.where(ls % 2 == 0, -1.0, 1.0)


@dataclass
class ModeSlice:
    """One time slice of a scalar field in mode space.

    ``h`` and ``h_t`` have shape ``(n_r, n_modes)`` (real or complex) with
    ``r = j * dr``; ``F`` optionally holds the mode coefficients of ``Box f``.
    """

    t: float
    dr: float
    h: np.ndarray
    h_t: np.ndarray
    F: np.ndarray = None

    @property
    def r(self):
        return np.arange(self.h.shape[0]) * self.dr

    @property
    def l_max(self):
        return int(round(np.sqrt(self.h.shape[-1]))) - 1

    @property
    def ls(self):
        return sphere.mode_labels(self.l_max)[0].astype(float)

    def h_r(self):
        return radial_diff1(self.h, self.dr, _parity_h(self.l_max))

    def h_over_r(self):
        """``h / r`` with the regular limit ``h'(0)`` on the axis."""
        r = self.r
        out = np.empty_like(self.h)
        out[1:] = self.h[1:] / r[1:, None]
        out[0] = self.h_r()[0]
        return out

    @classmethod
    def from_profile(cls, t, r, f, f_t, F=None):
        r = np.asarray(r, dtype=float)
        return cls(t, r[1] - r[0], r[:, None] * f, r[:, None] * f_t,
                   None if F is None else F)


def _radial(y, dr):
    return float(simpson(y, dx=dr, axis=0))


def _cone_node(sl):
    """Index of the lattice node on ``r = t`` (interior only), else None."""
    j = int(round(sl.t / sl.dr))
    if 0 < j < sl.h.shape[0] - 1 and abs(sl.t - j * sl.dr) < 1e-9 * max(1.0, sl.t):
        return j
    return None


def _radial_split(dens_fn, sl):
    """Simpson integral of ``dens_fn(q)`` split at the light cone.

    The weight has a kink at ``q = 0``; for the ``q <= 0`` piece the cone node
    is evaluated with the interior branch.
    """
    q = sl.r - sl.t
    j = _cone_node(sl)
    if j is None:
        return _radial(dens_fn(q), sl.dr)
    ql = q[: j + 1].copy()
    ql[-1] = -0.0
    left = dens_fn(np.concatenate([ql, q[j + 1:]]), slice(0, j + 1), interior=True)
    right = dens_fn(q, slice(j, None), interior=False)
    return _radial(left, sl.dr) + _radial(right, sl.dr)


def _weight_values(weight, q, deriv, interior=None):
    f = weight.derivative if deriv else weight
    if interior:
        q = np.where(q == 0, -1e-300, q)
    return f(q)


def _null_parts(sl):
    hr = sl.h_r()
    Lh = sl.h_t + hr
    Lbh = sl.h_t - hr
    hor = sl.h_over_r()
    ang = sl.ls * (sl.ls + 1) * np.abs(hor) ** 2
    return Lh, Lbh, ang


def _energy_unweighted(sl):
    r, t = sl.r, sl.t
    p2, q2 = japan(t + r) ** 2, japan(t - r) ** 2
    Lh, Lbh, ang = _null_parts(sl)
    return 0.5 * (p2[:, None] * np.abs(Lh) ** 2 + (p2 + q2)[:, None] * ang
                  + q2[:, None] * np.abs(Lbh) ** 2).sum(axis=-1)


def energy_density(sl, weight=None):
    """Radial density of ``E^w`` summed over modes (already includes ``r^2``)."""
    weight = weight or UnitWeight()
    return _energy_unweighted(sl) * weight(sl.r - sl.t)


def _integrate(sl, base, weight, deriv=False):
    def dens(q, part=slice(None), interior=None):
        return (base * _weight_values(weight, q, deriv, interior))[part]
    return _radial_split(dens, sl)


def _envelope_ok(sl, fraction=0.05):
    n = sl.h.shape[0]
    m = max(2, int(fraction * n))
    edge = np.abs(sl.h[-m:]).max()
    bulk = max(np.abs(sl.h).max(), 1e-300)
    return edge <= 1e-6 * bulk or bulk == 1e-300


def conformal_energy(sl, weight=None, t=None):
    """``E^w[f](t)``; warns when the field does not decay at the lattice edge."""
    if t is not None and not np.isclose(t, sl.t):
        raise ValueError("slice time does not match t")
    if not _envelope_ok(sl):
        warnings.warn("field does not decay at the outer radius; energy is truncated")
    return _integrate(sl, _energy_unweighted(sl), weight or UnitWeight())


def _flux_unweighted(sl):
    r, t = sl.r, sl.t
    p2, q2 = japan(t + r) ** 2, japan(t - r) ** 2
    Lh, Lbh, _ = _null_parts(sl)
    K = 0.5 * (p2[:, None] * Lh + q2[:, None] * Lbh)
    return 2.0 * np.real(K * np.conj(sl.F)).sum(axis=-1) * r


def _bulk_unweighted(sl):
    r, t = sl.r, sl.t
    p2, q2 = japan(t + r) ** 2, japan(t - r) ** 2
    Lh, _, ang = _null_parts(sl)
    return (p2[:, None] * np.abs(Lh) ** 2 + q2[:, None] * ang).sum(axis=-1)


def flux_density(sl, weight):
    """``(2/r) Re(K0bar(r f) conj(F)) w`` summed over modes, times ``r^2``."""
    return _flux_unweighted(sl) * weight(sl.r - sl.t)


def bulk_density(sl, weight):
    """``(<t+r>^2 |L(rf)/r|^2 + <t-r>^2 |dslash f|^2) w'`` times ``r^2``."""
    return _bulk_unweighted(sl) * weight.derivative(sl.r - sl.t)


def flux_integral(sl, weight):
    return _integrate(sl, _flux_unweighted(sl), weight)


def bulk_integral(sl, weight):
    return _integrate(sl, _bulk_unweighted(sl), weight, deriv=True)


@dataclass
class IdentityTerms:
    E1: float
    E2: float
    source: float
    bulk: float
    residual: float


def energy_identity_terms(slices, weight=None):
    """All terms of ``E(t1) = E(t2) + int int source + int int bulk``.

    ``slices`` must be ascending in t with ``F`` set; time integrals use the
    trapezoid rule over the slice times.
    """
    weight = weight or UnitWeight()
    ts = np.array([s.t for s in slices])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("slices must be strictly ascending in t")
    src = np.array([flux_integral(s, weight) for s in slices])
    blk = np.array([bulk_integral(s, weight) for s in slices])
    E1 = conformal_energy(slices[0], weight)
    E2 = conformal_energy(slices[-1], weight)
    S, B = trapezoid(src, ts), trapezoid(blk, ts)
    scale = max(E1, E2)
    res = abs(E1 - E2 - S - B) / scale if scale > 0 else abs(E1 - E2 - S - B)
    return IdentityTerms(E1, E2, float(S), float(B), float(res))


def energy_identity_residual(slices, weight=None):
    """Normalized defect of the weighted conformal energy identity."""
    return energy_identity_terms(slices, weight).residual


def manufactured_pulse_slices(dr, dt, l=1, t_end=4.0, r_max=24.0, centre=8.0):
    """Slices of ``h = r^(l+1) exp(-(r - centre - t/2)^2)`` in the ``(l, 0)`` mode
    with ``F = Box f`` supplied analytically, for ``t`` in ``[0, t_end]``."""
    r = np.arange(0, r_max + dr / 2, dr)
    n, idx = sphere.n_modes(l), sphere.lm_index(l, 0)
    out = []
    for t in np.arange(0, t_end + dt / 2, dt):
        x = r - centre - t / 2
        G = np.exp(-x**2)
        Gx, Gxx = -2 * x * G, (4 * x**2 - 2) * G
        h = r ** (l + 1) * G
        htt = 0.25 * r ** (l + 1) * Gxx
        hrr = 2 * (l + 1) * r**l * Gx + r ** (l + 1) * Gxx
        if l > 0:
            hrr = hrr + l * (l + 1) * r ** (l - 1) * G
        F = np.zeros_like(r)
        F[1:] = (-htt[1:] + hrr[1:] - l * (l + 1) * h[1:] / r[1:] ** 2) / r[1:]
        cols = [np.zeros((r.size, n)) for _ in range(3)]
        for c, v in zip(cols, (h, -0.5 * r ** (l + 1) * Gx, F)):
            c[:, idx] = v
        out.append(ModeSlice(float(t), dr, *cols))
    return out


def hardy_check(slices, weight=None, baseline=10.0):
    """Ratio ``int int |f|^2 w / int int <t+r>^2 |L(rf)/r|^2 w`` over the slices.

    The last slice must carry trivial data.  Returns ``(ratio, passed)``;
    ``0/0`` is reported as 0.
    """
    weight = weight or Weight(0.9, 0.05)
    last = slices[-1]
    if np.abs(last.h).max() > 0 or np.abs(last.h_t).max() > 0:
        scale = max(max(np.abs(s.h).max() for s in slices), 1e-300)
        if np.abs(last.h).max() > 1e-8 * scale:
            warnings.warn("final slice is not trivial; Hardy inequality need not apply")
    ts = np.array([s.t for s in slices])
    num, den = [], []
    for s in slices:
        w = weight(s.r - s.t)
        num.append(_radial((np.abs(s.h) ** 2).sum(-1) * w, s.dr))
        Lh = s.h_t + s.h_r()
        den.append(_radial(japan(s.t + s.r) ** 2 * (np.abs(Lh) ** 2).sum(-1) * w, s.dr))
    N, D = abs(trapezoid(num, ts)), abs(trapezoid(den, ts))
    if D == 0.0:
        if N == 0.0:
            return 0.0, True
        raise ArithmeticError("nonzero field with vanishing Hardy denominator: discretization fault")
    ratio = N / D
    return float(ratio), bool(ratio <= baseline)


# --- vector-field based checks ----------------------------------------------

def weighted_norm(coeffs, r, t, weight):
    """``||f||_{L^2(w)} = (int |f|^2 w dx)^(1/2)`` from mode coefficients."""
    dens = (np.abs(coeffs) ** 2).sum(-1) * weight(r - t) * r**2
    return np.sqrt(max(_radial(dens, r[1] - r[0]), 0.0))


def zi_norms(f, k, weight, max_order):
    """``||Z^I f||_{L^2(w)}`` at time index ``k`` for every ``|I| <= max_order``."""
    out = {}
    cache = {(): f}
    for I in multi_indices(max_order):
        if I not in cache:
            cache[I] = cache[I[1:]].apply(I[0])
        out[I] = weighted_norm(cache[I].coeffs[k], f.r, f.t[k], weight)
    return out


@dataclass
class KSReport:
    t: float
    sup: float
    denominator: float
    ratio: float
    baseline: float
    passed: bool


def ks_pointwise_check(f, k=None, weight=None, baseline=10.0, grid=None):
    """Weighted Klainerman-Sobolev ratio on slice ``k`` of a :class:`SampledField`."""
    weight = weight or Weight(0.9, 0.05)
    k = f.t.size // 2 if k is None else k
    t = f.t[k]
    grid = grid or sphere.cached_grid(f.l_max)
    vals = np.abs(f.slice_values(k, grid))
    r = f.r
    env = (1 + t + r) * np.sqrt(1 + np.abs(t - r)) * np.sqrt(weight(r - t))
    sup = float((env[:, None] * vals).max())
    den = float(sum(zi_norms(f, k, weight, 2).values()))
    ratio = 0.0 if sup == 0.0 else sup / den
    return KSReport(float(t), sup, den, ratio, baseline, bool(ratio <= baseline))


def norm_one_plus(f, k, weight):
    """``||f||_{1,+}`` on slice ``k``."""
    sl = ModeSlice.from_profile(f.t[k], f.r, f.coeffs[k], f.d_t().coeffs[k])
    r, t = sl.r, sl.t
    p2, q2 = japan(t + r) ** 2, japan(t - r) ** 2
    Lh, Lbh, ang = _null_parts(sl)
    hor = np.abs(sl.h_over_r()) ** 2
    dens = (p2[:, None] * (np.abs(Lh) ** 2 + ang) + q2[:, None] * np.abs(Lbh) ** 2
            + q2[:, None] * hor + np.abs(sl.h) ** 2).sum(-1)
    return np.sqrt(max(_radial(dens * weight(r - t), sl.dr), 0.0)), sl


def norm_control_check(f, k=None, weight=None):
    """``(||f||_{1,+} / E^w[f]^(1/2), ||f||_1 / ||f||_{1,+})``, 0 for zero fields."""
    weight = weight or Weight(0.9, 0.05)
    k = f.t.size // 2 if k is None else k
    plus, sl = norm_one_plus(f, k, weight)
    E = conformal_energy(sl, weight)
    one = sum(zi_norms(f, k, weight, 1).values())
    a = 0.0 if plus == 0 else plus / np.sqrt(E)
    b = 0.0 if one == 0 else one / plus
    return float(a), float(b)


# --- decay fits ---------------------------------------------------------------

@dataclass
class DecayFit:
    exponent: float
    ci: float
    log_constant: float
    rejected: list
    n: int

    def model(self, t):
        return np.exp(self.log_constant) * japan(np.asarray(t)) ** self.exponent


def decay_fit(t, values, confidence=0.95):
    """Least-squares ``log value = c + p log<t>`` with a Student-t interval on p."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    bad = ~(v > 0) | ~np.isfinite(v)
    rejected = [(float(a), float(b)) for a, b in zip(t[bad], v[bad])]
    t, v = t[~bad], v[~bad]
    if t.size < 3:
        raise ValueError("decay_fit needs at least three positive samples")
    if t.size < 6:
        warnings.warn("fewer than six samples in decay fit")
    x, y = np.log(japan(t)), np.log(v)
    fit = stats.linregress(x, y)
    dof = t.size - 2
    ci = float(stats.t.ppf(0.5 + confidence / 2, dof) * fit.stderr) if dof > 0 else np.inf
    return DecayFit(float(fit.slope), ci, float(fit.intercept), rejected, int(t.size))


# --- Lorenz gauge monitor -------------------------------------------------------

def _axis_fill(coeffs_in, ls):
    """Prepend the ``r = 0`` row: l = 0 by quartic extrapolation, zero otherwise."""
    c = coeffs_in
    origin = 4 * c[0] - 6 * c[1] + 4 * c[2] - c[3]
    origin = np.where(ls == 0, origin, 0.0)
    return np.concatenate([origin[None], c], axis=0)


def lambda_field(window, r, app):
    """``lambda = d^a (A_app + v)_a`` on the window as a :class:`SampledField`."""
    l_v = int(round(np.sqrt(window.v.shape[-1]))) - 1
    band = max(l_v, app.l_A) + 1
    g = sphere.cached_grid(band, band)
    ls = sphere.mode_labels(band)[0]
    out = []
    for t in window.times:
        lam = g.analyze(app.gauge_on_grid(t, r[1:], g))
        out.append(_axis_fill(lam, ls))
    lam_app = np.stack(out)
    fields = [SampledField(window.times, r, window.v[a]) for a in range(4)]
    lam_v = -sphere.pad_band(fields[0].d_t().coeffs, l_v + 1)
    for i in range(1, 4):
        lam_v = lam_v + fields[i].partial(i).coeffs
    total = sphere.pad_band(lam_v, band) + lam_app
    return SampledField(window.times, r, total)


def discrete_box(f, k):
    """``Box f`` in modes at time index ``k`` (rows ``r_j``, j >= 1)."""
    r = f.r
    ls = sphere.mode_labels(f.l_max)[0].astype(float)
    ftt = _time_second(f.coeffs, f.dt, k)
    h = r[:, None] * f.coeffs[k]
    hrr = radial_diff2(h, f.dr, _parity_h(f.l_max))
    lap = hrr[1:] / r[1:, None] - ls * (ls + 1) * h[1:] / r[1:, None] ** 3
    return -ftt[1:] + lap


def _time_second(c, dt, k):
    n = c.shape[0]
    if 2 <= k <= n - 3:
        return (-c[k - 2] + 16 * c[k - 1] - 30 * c[k] + 16 * c[k + 1] - c[k + 2]) / (12 * dt**2)
    from .geometry import diff2
    return diff2(c, dt, axis=0)[k]


def manufactured_box_residual(dr, dt, r_max=24.0, centre=8.0, width=1.0, l=0):
    """Relative error of :func:`discrete_box` on an analytic pulse at the given lattice.

    The pulse is ``f = Y_l0 r^l exp(-(r - c - t/2)^2 / s^2)`` on seven time levels.
    """
    r = np.arange(int(round(r_max / dr)) + 1) * dr
    times = (np.arange(7) - 3) * dt + 4.0
    n = sphere.n_modes(l)
    idx = sphere.lm_index(l, 0)
    coeffs = np.zeros((7, r.size, n))
    for i, t in enumerate(times):
        coeffs[i, :, idx] = r**l * np.exp(-((r - centre - 0.5 * t) / width) ** 2)
    f = SampledField(times, r, coeffs)
    box = discrete_box(f, 3)[:, idx]
    t = times[3]
    x = (r - centre - 0.5 * t) / width
    G = np.exp(-x**2)
    Gr = -2 * x / width * G
    Grr = (4 * x**2 - 2) / width**2 * G
    Gtt = 0.25 * Grr
    h = r ** (l + 1) * G
    hrr = 2 * (l + 1) * r**l * Gr + r ** (l + 1) * Grr
    if l > 0:
        hrr = hrr + l * (l + 1) * r ** (l - 1) * G
    ri = r[1:]
    exact = (-r[1:] ** (l + 1) * Gtt[1:] + hrr[1:]) / ri - l * (l + 1) * h[1:] / ri**3
    return float(np.abs(box - exact).max() / np.abs(coeffs[3]).max())


@dataclass
class GaugeMonitor:
    times: list
    sup_lambda: list
    sup_z_lambda: list
    wave_residual: list
    relative_wave_residual: list
    manufactured: float
    plateau_ok: bool
    envelope_factor: float = 100.0


def gauge_monitor(result, app, T=None, windows=None, factor=100.0):
    """Sup norms of ``Z^I lambda`` (|I| <= 1) and the plateau residual of
    ``Box lambda = |phi|^2 lambda`` on the stored windows."""
    T = result.grid.T if T is None else T
    r = result.grid.r
    times, sups, zs, res, rel = [], [], [], [], []
    mms = manufactured_box_residual(result.grid.dr, result.grid.dt)
    keys = sorted(result.windows) if windows is None else windows
    for tw in keys:
        win = result.windows[tw]
        lam = lambda_field(win, r, app)
        k = win.centre
        g = sphere.cached_grid(lam.l_max + 1)
        vals = lam.slice_values(k, g)[1:]
        sup = float(np.abs(vals).max())
        zsup = sup
        for tag in ("d0", "d1", "d2", "d3", "O12", "O13", "O23", "O01", "O02", "O03", "S"):
            z = lam.apply(tag)
            gz = sphere.cached_grid(z.l_max)
            zsup = max(zsup, float(np.abs(z.slice_values(k, gz))[1:].max()))
        box = discrete_box(lam, k)
        box_vals = g.synthesize(sphere.pad_band(box, g.l_max))
        phi_app = app.fields_on_grid(win.times[k], r[1:], g)["phi"]
        u = g.synthesize(sphere.pad_band(win.u[k][1:], g.l_max))
        mod2 = np.abs(phi_app + u) ** 2
        wr = float(np.abs(box_vals - mod2 * vals).max()) if tw <= T else np.nan
        times.append(float(tw))
        sups.append(sup)
        zs.append(zsup)
        res.append(wr)
        rel.append(wr / sup if sup > 0 else 0.0)
    plateau = [x for x, t in zip(rel, times) if t <= T]
    ok = bool(all(x <= factor * mms for x in plateau)) if plateau else True
    return GaugeMonitor(times, sups, zs, res, rel, mms, ok, factor)


# --- energy report ----------------------------------------------------------

def slices_from_result(result, which="u"):
    """Per-checkpoint :class:`ModeSlice` (ascending in t) for ``u`` or ``v0..v3``."""
    out = []
    for c in result.checkpoints:
        if which == "u":
            h = c.h[:, 0] + 1j * c.h[:, 1]
            k = c.k[:, 0] + 1j * c.k[:, 1]
        else:
            a = int(which[1])
            h, k = c.h[:, 2 + a], c.k[:, 2 + a]
        out.append(ModeSlice(c.t, result.grid.dr, h, -k))
    return out


@dataclass
class EnergyReport:
    config_hash: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, t, quantity, fieldname, value):
        self.rows.append({"t": float(t), "quantity": quantity, "field": fieldname,
                          "value": float(value)})

    def series(self, quantity, fieldname):
        pts = [(r["t"], r["value"]) for r in self.rows
               if r["quantity"] == quantity and r["field"] == fieldname]
        pts.sort()
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["t", "quantity", "field", "value"], lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"config_hash": self.config_hash, "summary": self.summary},
                          indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def build_energy_report(result, weight=None, config_hash="", fit_window=None):
    """Energies, weighted L2 norms, accumulated w'-integrals and decay fits."""
    weight = weight or Weight(0.9, 0.05)
    rep = EnergyReport(config_hash)
    fields = ("u", "v0", "v1", "v2", "v3")
    for name in fields:
        sl = slices_from_result(result, name)
        acc = 0.0
        prev = None
        # accumulate |w'| integrals from the top of the run downwards
        for s in reversed(sl):
            dens = abs(bulk_integral(s, weight))
            if prev is not None:
                acc += 0.5 * (dens + prev[1]) * (prev[0] - s.t)
            prev = (s.t, dens)
            rep.add(s.t, "S1", name, acc)
        for s in sl:
            rep.add(s.t, "energy", name, conformal_energy(s, weight) if np.any(s.h) else 0.0)
            rep.add(s.t, "l2w", name, weighted_norm(s.h_over_r(), s.r, s.t, weight))
    ts, nu = rep.series("l2w", "u")
    lo, hi = fit_window or (min(8.0, result.grid.T / 2), result.grid.T)
    sel = (ts >= lo) & (ts <= hi) & (nu > 0)
    summary = {"grid": result.grid.describe(), "data_hash": result.data_hash,
               "support_max": result.support_max, "theorem_exponent":
               -(weight.gamma / 2 - weight.mu / 2 - 0.25)}
    if sel.sum() >= 3:
        fit = decay_fit(ts[sel], nu[sel])
        summary["fit_u"] = {"exponent": fit.exponent, "ci": fit.ci, "window": [lo, hi]}
        band = nu[sel] / japan(ts[sel]) ** summary["theorem_exponent"]
        summary["band_factor_u"] = float(band.max() / band.min())
    rep.summary = summary
    return rep


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
