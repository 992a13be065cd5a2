import hashlib
import json

import numpy as np
import pytest

from mkgscatter import cli
from mkgscatter.radiation_data import data_hash, load, synthetic_data


def write_config(tmp_path, **sections):
    cfg = {}
    for name, values in sections.items():
        cfg[name] = values
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_default_config_is_valid():
    cfg = cli.load_config()
    assert cfg["physics"]["gamma"] == 0.9 and cfg["grid"]["T_list"] == [16.0, 32.0, 64.0]
    assert cfg is not cli.DEFAULT_CONFIG


@pytest.mark.parametrize("physics", [{"gamma": 1.2}, {"gamma": 0.5}, {"mu": 0.5},
                                     {"eps": -1.0}, {"a_band": 3}])
def test_invalid_physics_exit_2(tmp_path, physics):
    cfg = write_config(tmp_path, physics=physics)
    assert run("make-data", "--config", cfg, "--out", tmp_path / "o") == 2


def test_unreadable_config_and_bad_arguments(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("verify", "--config", bad) == 2
    assert run("verify", "--config", tmp_path / "missing.json") == 2
    assert run("no-such-command") == 2
    assert run("verify", "--out", tmp_path, "--filter", "nonsense") == 2


def test_make_data_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert run("make-data", "--out", out, "--seed", 3) == 0
        outs.append(out)
    a, b = ((o / "radiation_seed3.mkg").read_bytes() for o in outs)
    assert a == b
    s = json.loads((outs[0] / "make-data.json").read_text())
    assert s["passed"] and s["config_hash"] == cli.config_hash(cli.load_config(seed=3, out=str(outs[0])))
    assert s["sha256"] == hashlib.sha256(a).hexdigest()


def test_make_data_eps_zero_gives_zero_fields(tmp_path):
    cfg = write_config(tmp_path, physics={"eps": 0.0})
    assert run("make-data", "--config", cfg, "--out", tmp_path / "o") == 0
    d = load(tmp_path / "o" / "radiation_seed0.mkg")
    assert not np.any(d.phi) and not np.any(d.a)
    s = json.loads((tmp_path / "o" / "make-data.json").read_text())
    assert s["charge"] == 0.0 and s["gauge_residual"] == 0.0


def test_verify_defaults_pass(tmp_path, capsys):
    assert run("verify", "--out", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    assert {line.split()[1] for line in lines} == set(cli.SUITES)
    assert all(line.startswith("PASS") for line in lines)
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["config_hash"] == cli.config_hash(cli.load_config(out=str(tmp_path)))


def test_verify_filter_runs_one_suite(tmp_path, capsys):
    assert run("verify", "--out", tmp_path, "--filter", "kernels") == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 and out[0].startswith("PASS kernels")
    assert list(json.loads((tmp_path / "verify.json").read_text())["results"]) == ["kernels"]


def test_corrupted_golden_fails_named_check(tmp_path, capsys):
    golden = tmp_path / "seed0.sha256"
    golden.write_text("0" * 64 + "\n")
    cfg = write_config(tmp_path, paths={"golden": str(golden)})
    assert run("verify", "--config", cfg, "--out", tmp_path / "o", "--filter", "golden") == 4
    assert capsys.readouterr().out.startswith("FAIL golden")


def test_golden_matches_fresh_synthesis():
    expected = cli.golden_path(cli.load_config()).read_text().split()[0]
    assert expected == data_hash(synthetic_data(seed=0, l_max=4, phi_band=1, a_band=2))


def test_solve_zero_data_exit_0(tmp_path):
    cfg = write_config(tmp_path, physics={"eps": 0.0}, grid={"T": 2.0, "checkpoint_dt": 1.0})
    out = tmp_path / "o"
    assert run("solve", "--config", cfg, "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(rep["summary"]["checks"].values())
    assert rep["summary"]["gauge"]["sup_lambda"] == [0.0]
    rows = (out / "energy.csv").read_text().splitlines()[1:]
    assert rows and all(float(r.split(",")[-1]) == 0.0 for r in rows)
    assert (out / "final.ckpt").exists()
    assert run("report", "--config", cfg, "--out", out) == 0


def test_solve_cfl_violation_exit_3(tmp_path):
    cfg = write_config(tmp_path, grid={"T": 2.0, "cfl": 0.6})
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 3


def test_solve_short_horizon_support_failure_exit_4(tmp_path):
    # at T = 4 the data's q-extent is comparable to T and leaks past r = 6T - t
    cfg = write_config(tmp_path, grid={"T": 4.0, "checkpoint_dt": 1.0})
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 4


def test_cauchy_single_horizon_is_usage_error(tmp_path):
    cfg = write_config(tmp_path, grid={"T_list": [16.0]})
    assert run("cauchy", "--config", cfg, "--out", tmp_path / "o") == 2
    cfg = write_config(tmp_path, grid={"T_list": [16.0, 16.0, 32.0]})
    assert run("cauchy", "--config", cfg, "--out", tmp_path / "o") == 2


def test_cauchy_zero_data_zero_table(tmp_path):
    cfg = write_config(tmp_path, physics={"eps": 0.0, "l_max": 2, "a_band": 0},
                       grid={"T_list": [1.0, 2.0, 4.0]})
    out = tmp_path / "o"
    assert run("cauchy", "--config", cfg, "--out", out) == 0
    rows = json.loads((out / "cauchy.json").read_text())["rows"]
    assert len(rows) == 2 and all(r["diff_u"] == 0 and r["diff_v"] == 0 for r in rows)
    assert (out / "cauchy.csv").read_text().startswith("T1,T2,diff_u,diff_v")


def test_report_without_outputs_is_config_error(tmp_path):
    assert run("report", "--out", tmp_path / "empty") == 2


def test_report_propagates_failures(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    (out / "verify.json").write_text(json.dumps(
        {"config_hash": "x", "results": {"kernels": {"passed": False}}}))
    assert run("report", "--out", out) == 4


def test_threads_flag_accepted(tmp_path):
    assert run("verify", "--out", tmp_path, "--filter", "charge", "--threads", 1) == 0
