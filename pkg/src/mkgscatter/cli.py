"""Command-line front end: ``mkgscatter {make-data,solve,cauchy,verify,report}``.

Exit codes: 0 pass, 2 configuration error, 3 numerical abort, 4 assertion failure.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .diagnostics import config_hash

log = logging.getLogger("mkgscatter")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ASSERT = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "paths": {"data": None, "out": "mkg-out", "checkpoints": None, "golden": None},
    "physics": {"gamma": 0.9, "mu": 0.05, "eps": 0.01, "l_max": 4, "phi_band": 1,
                "a_band": 2, "order": 7, "Q": 40.0, "n_q": 2048},
    "grid": {"T": 16.0, "T_list": [16.0, 32.0, 64.0], "n_r": None, "dr": 0.25, "cfl": 0.5,
             "checkpoint_dt": 1.0, "window_times": None},
    "diagnostics": {"energy": True, "hardy": True, "ks": True, "gauge": True,
                    "hardy_baseline": 10.0, "ks_baseline": 10.0},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, seed=None, out=None):
    cfg = DEFAULT_CONFIG
    if path:
        try:
            with open(path) as fh:
                cfg = _merge(DEFAULT_CONFIG, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["paths"]["out"] = out
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    from .radiation_data import validate_parameters
    ph = cfg["physics"]
    try:
        validate_parameters(ph["gamma"], ph["mu"], ph["order"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if ph["eps"] < 0:
        raise ConfigError("eps must be non-negative")
    if ph["a_band"] > ph["l_max"] - 2:
        raise ConfigError("a_band must not exceed l_max - 2")
    g = cfg["grid"]
    if g.get("T") is not None and g["T"] <= 0:
        raise ConfigError("T must be positive")


def _out_dir(cfg):
    p = Path(cfg["paths"]["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _data(cfg):
    from .radiation_data import load, synthetic_data
    path = cfg["paths"].get("data")
    if path:
        return load(path)
    ph = cfg["physics"]
    return synthetic_data(seed=cfg["seed"], l_max=ph["l_max"], eps=ph["eps"], gamma=ph["gamma"],
                          mu=ph["mu"], order=ph["order"], Q=ph["Q"], n_q=ph["n_q"],
                          phi_band=ph["phi_band"], a_band=ph["a_band"])


def _grid(cfg, T=None):
    from .solver import SolverGrid
    g = cfg["grid"]
    T = float(g["T"] if T is None else T)
    if g.get("n_r"):
        return SolverGrid.from_n_r(T, int(g["n_r"]), cfg["physics"]["l_max"], g["cfl"])
    return SolverGrid(T, float(g["dr"]), cfg["physics"]["l_max"], float(g["cfl"]))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# --- subcommands --------------------------------------------------------------

def cmd_make_data(cfg):
    from .radiation_data import (data_hash, evaluate_norm, gauge_tolerance, save,
                                 solve_gauge_constraint, compute_charge)
    data = _data(cfg)
    out = _out_dir(cfg)
    path = Path(cfg["paths"].get("data") or out / f"radiation_seed{cfg['seed']}.mkg")
    if not cfg["paths"].get("data"):
        save(path, data)
    norm = evaluate_norm(data, 1)
    charge = compute_charge(data) if data.eps > 0 else 0.0
    residual = solve_gauge_constraint(data, verify=True) if data.eps > 0 else 0.0
    ok = bool(np.isfinite(norm) and residual <= gauge_tolerance(charge))
    summary = {"config_hash": config_hash(cfg), "path": str(path), "sha256": data_hash(data),
               "charge": charge, "norm_1": norm, "gauge_residual": residual, "passed": ok}
    _write_json(out / "make-data.json", summary)
    print(json.dumps(summary, sort_keys=True, default=_jsonable))
    return EXIT_OK if ok else EXIT_ASSERT


def _window_times(cfg, T):
    wt = cfg["grid"].get("window_times")
    if wt is None:
        wt = [x for x in (2.0, 4.0, 8.0, 16.0, 32.0, 64.0) if x <= T]
    return [float(x) for x in wt]


def cmd_solve(cfg):
    from . import diagnostics as dg
    from .approx import build_approximate
    from .solver import save_checkpoint, solve_backward
    data = _data(cfg)
    grid = _grid(cfg)
    app = build_approximate(data)
    out = _out_dir(cfg)
    res = solve_backward(data, grid=grid, app=app, checkpoint_dt=cfg["grid"]["checkpoint_dt"],
                         window_times=_window_times(cfg, grid.T))
    ck = Path(cfg["paths"].get("checkpoints") or out)
    ck.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ck / "final.ckpt", res.checkpoints[0], grid, res.data_hash)
    chash = config_hash(cfg)
    weight = _weight(cfg)
    rep = dg.build_energy_report(res, weight, config_hash=chash)
    d = cfg["diagnostics"]
    checks = {"support": res.support_max <= 1e-12 * data.eps}
    if d.get("hardy"):
        ratio, _ = dg.hardy_check(dg.slices_from_result(res, "u"), weight)
        rep.summary["hardy_u"] = ratio
        checks["hardy"] = ratio <= d["hardy_baseline"]
    if d.get("ks") and res.windows:
        win = res.windows[max(res.windows)]
        ks = dg.ks_pointwise_check(win.field(grid.r, "u"), win.centre, weight)
        rep.summary["ks_u"] = ks.ratio
        checks["ks"] = ks.ratio <= d["ks_baseline"]
    if d.get("gauge") and res.windows:
        gm = dg.gauge_monitor(res, app)
        rep.summary["gauge"] = {"times": gm.times, "sup_lambda": gm.sup_lambda,
                                "relative_wave_residual": gm.relative_wave_residual,
                                "manufactured": gm.manufactured, "plateau_ok": gm.plateau_ok}
    rep.summary["checks"] = checks
    (out / "energy.csv").write_text(rep.to_csv())
    (out / "report.json").write_text(rep.to_json() + "\n")
    log.info("solve finished: %s", checks)
    return EXIT_OK if all(checks.values()) else EXIT_ASSERT


def cmd_cauchy(cfg):
    from .solver import cauchy_study
    T_list = cfg["grid"].get("T_list") or []
    if len(set(T_list)) < 3:
        raise ConfigError("cauchy needs a T_list with at least three distinct horizons")
    data = _data(cfg)
    rows, _ = cauchy_study(data, T_list, dr=float(cfg["grid"]["dr"]), l_max=cfg["physics"]["l_max"])
    out = _out_dir(cfg)
    with open(out / "cauchy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T1", "T2", "diff_u", "diff_v", "ratio", "predicted_ratio", "flagged"])
        for r in rows:
            w.writerow([r.T1, r.T2, repr(r.diff_u), repr(r.diff_v), repr(r.ratio),
                        repr(r.predicted_ratio), int(r.flagged)])
    _write_json(out / "cauchy.json", {"config_hash": config_hash(cfg),
                                      "rows": [r.__dict__ for r in rows]})
    for r in rows:
        print(f"T1={r.T1:g} T2={r.T2:g} diff_u={r.diff_u:.3e} diff_v={r.diff_v:.3e} "
              f"ratio={r.ratio:.3f} flagged={r.flagged}")
    return EXIT_ASSERT if any(r.flagged for r in rows) else EXIT_OK


def golden_path(cfg):
    p = cfg["paths"].get("golden")
    if p:
        return Path(p)
    return Path(str(resources.files("mkgscatter") / "golden" / "seed0.sha256"))


def _weight(cfg):
    from .geometry import Weight
    return Weight(cfg["physics"]["gamma"], cfg["physics"]["mu"])


def _kernel_oracle():
    """Adaptive reference quadrature; double precision only resolves low degrees."""
    try:
        import mpmath as mp
    except ImportError:
        from scipy.integrate import quad
        from scipy.special import eval_legendre
        ref = lambda l, z: quad(lambda m: eval_legendre(l, m) / (z - m), -1, 1,
                                epsabs=0, epsrel=1e-13, limit=400)[0]
        return ref, 4, "scipy.quad"
    def ref(l, z):
        # Q_l(z) ~ z^(-l-1): carry enough digits to survive the cancellation
        with mp.workdps(25 + int((l + 1) * np.log10(z))):
            zz = mp.mpf(z)
            return float(mp.quad(lambda m: mp.legendre(l, m) / (zz - m), [-1, 1],
                                 method="gauss-legendre"))
    return ref, 16, "mpmath.quad"


def _suite_kernels(cfg):
    from .kernels import funk_hecke_weight
    ref, l_top, name = _kernel_oracle()
    worst = 0.0
    for l in sorted({0, 1, 3, l_top // 2, l_top}):
        for z in (1.05, 1.5, 4.0, 20.0):
            exact = ref(l, z)
            worst = max(worst, abs(funk_hecke_weight(l, z, 1.0) - exact) / abs(exact))
    return worst <= 1e-9, {"max_rel_err": worst, "oracle": name, "l_max": l_top}


def _suite_charge(cfg):
    from .radiation_data import compute_charge, from_samples
    q = np.linspace(-10.0, 10.0, 8193)
    d = from_samples(q, lambda q, w: np.exp(-q**2) * np.exp(-1j * q), l_max=0, eps=0.0)
    err = abs(compute_charge(d) + 4 * np.pi * np.sqrt(np.pi / 2))
    return err <= 1e-6, {"abs_err": err}


def _suite_gauge(cfg):
    from .radiation_data import gauge_tolerance, solve_gauge_constraint, compute_charge
    data = _data(cfg)
    res = solve_gauge_constraint(data, verify=True)
    return res <= gauge_tolerance(compute_charge(data)), {"residual": res}


def _suite_energy(cfg):
    from .diagnostics import (ModeSlice, conformal_energy, energy_identity_residual,
                              manufactured_pulse_slices)
    G = lambda s: np.exp(-2 * (s - 3) ** 2)
    G1 = lambda s: -4 * (s - 3) * G(s)
    dr = 0.01
    r = np.arange(0, 40 + dr / 2, dr)
    E = [conformal_energy(ModeSlice(t, dr, (G(t - r) - G(t + r))[:, None],
                                    (G1(t - r) - G1(t + r))[:, None])) for t in (0.0, 5.0, 10.0)]
    drift = float(np.abs(np.array(E) / E[0] - 1).max())
    res = [energy_identity_residual(manufactured_pulse_slices(h, h), _weight(cfg))
           for h in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    ok = drift <= 1e-6 and bool(np.all(orders >= 2.0)) and res[-1] <= 1e-3
    return ok, {"drift": drift, "identity_residuals": res, "orders": orders.tolist()}


def _suite_hardy(cfg):
    from .diagnostics import ModeSlice, hardy_check
    T, dr = 8.0, 0.1
    r = np.arange(0, 30 + dr / 2, dr)
    bump = (r * np.exp(-((r - 6.0) ** 2)))[:, None]
    slices = [ModeSlice(t, dr, (T - t) ** 2 * bump, -2 * (T - t) * bump)
              for t in np.linspace(0.0, T, 81)]
    ratio, ok = hardy_check(slices, _weight(cfg), cfg["diagnostics"]["hardy_baseline"])
    return ok, {"ratio": ratio}


def _suite_ks(cfg):
    from .diagnostics import ks_pointwise_check
    from .geometry import SampledField
    dr, dt = 0.1, 0.05
    r = np.arange(0, 20 + dr / 2, dr)
    t = 4.0 + (np.arange(7) - 3) * dt
    c = np.exp(-((r[None, :] - 5.0 - t[:, None]) ** 2))[..., None]
    rep = ks_pointwise_check(SampledField(t, r, c), 3, _weight(cfg),
                             cfg["diagnostics"]["ks_baseline"])
    return rep.passed, {"ratio": rep.ratio}


def _suite_golden(cfg):
    from .radiation_data import data_hash, synthetic_data
    path = golden_path(cfg)
    try:
        expected = path.read_text().split()[0]
    except (OSError, IndexError):
        return False, {"error": f"golden file {path} unreadable"}
    got = data_hash(synthetic_data(seed=0, l_max=4, phi_band=1, a_band=2))
    return got == expected, {"expected": expected, "got": got}


SUITES = {
    "kernels": _suite_kernels,
    "charge": _suite_charge,
    "gauge": _suite_gauge,
    "energy": _suite_energy,
    "hardy": _suite_hardy,
    "ks": _suite_ks,
    "golden": _suite_golden,
}


def cmd_verify(cfg, only=None):
    names = list(SUITES) if not only else only
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suites: {', '.join(unknown)}")
    results = {}
    for name in names:
        ok, info = SUITES[name](cfg)
        results[name] = {"passed": bool(ok), **info}
        print(f"{'PASS' if ok else 'FAIL'} {name} {json.dumps(info, default=_jsonable)}")
    out = _out_dir(cfg)
    _write_json(out / "verify.json", {"config_hash": config_hash(cfg), "results": results})
    return EXIT_OK if all(r["passed"] for r in results.values()) else EXIT_ASSERT


def cmd_report(cfg):
    out = Path(cfg["paths"]["out"])
    found = False
    status = EXIT_OK
    for name in ("make-data.json", "report.json", "cauchy.json", "verify.json"):
        p = out / name
        if not p.exists():
            continue
        found = True
        obj = json.loads(p.read_text())
        print(f"== {name} (config {obj.get('config_hash', '?')})")
        if name == "report.json":
            s = obj["summary"]
            for k in ("fit_u", "band_factor_u", "hardy_u", "ks_u", "support_max", "checks"):
                if k in s:
                    print(f"  {k}: {json.dumps(s[k])}")
            if not all(s.get("checks", {}).values()):
                status = EXIT_ASSERT
        elif name == "verify.json":
            for k, v in obj["results"].items():
                print(f"  {k}: {'PASS' if v['passed'] else 'FAIL'}")
                if not v["passed"]:
                    status = EXIT_ASSERT
        elif name == "cauchy.json":
            for r in obj["rows"]:
                print(f"  T1={r['T1']:g} T2={r['T2']:g} diff_u={r['diff_u']:.3e} ratio={r['ratio']}")
        else:
            print(f"  {json.dumps(obj, sort_keys=True)}")
    if not found:
        raise ConfigError(f"no reports under {out}")
    return status


def _set_threads(n):
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(int(n))
    except ImportError:
        os.environ["OMP_NUM_THREADS"] = str(n)


def build_parser():
    p = argparse.ArgumentParser(prog="mkgscatter", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("make-data", "solve", "cauchy", "verify", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="seed for synthetic data")
        s.add_argument("--threads", type=int, help="BLAS thread limit")
        if name == "verify":
            s.add_argument("--filter", help="comma-separated suites: " + ",".join(SUITES))
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    from .solver import CFLViolation, NumericalAbort, SupportViolation
    from .radiation_data import ConstraintViolation
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "make-data":
            return cmd_make_data(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "cauchy":
            return cmd_cauchy(cfg)
        if args.command == "verify":
            only = [s.strip() for s in args.filter.split(",")] if args.filter else None
            return cmd_verify(cfg, only)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CFLViolation, NumericalAbort) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (SupportViolation, ConstraintViolation) as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
