import json
import shutil
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdlab import cli
from mhdlab import diagnostics as dg
from mhdlab.errors import ConfigError

STATIC = """
[grid]
n1 = 8
n2 = 8
n3 = 9
[recipe]
name = static
[time]
t_end = 0.02
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_validate():
    cfg = cli.parse_config("")
    assert cfg == cli.RunConfig()
    assert len(cfg.hash) == 16


def test_unknown_keys_and_sections_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        cli.parse_config("[grid]\nnx = 4\n")
    with pytest.raises(ConfigError, match="unknown section"):
        cli.parse_config("[solver]\nn1 = 4\n")
    with pytest.raises(ConfigError, match="bad value"):
        cli.parse_config("[grid]\nn1 = four\n")
    with pytest.raises(ConfigError, match="malformed"):
        cli.parse_config("n1 = 4\n")


@pytest.mark.parametrize("text", [
    "[grid]\nn1 = 2\n",
    "[grid]\nmode = sphere\n",
    "[recipe]\nname = vortex\n",
    "[recipe]\norder = 4\n",
    "[grid]\nmode = torus\nn3 = 8\n[recipe]\norder = 1\n",
    "[diagnostics]\nenergy_order = 8\n",
    "[grid]\nn1 = 32\n[diagnostics]\nenergy_order = 8\nallow_order8 = true\n",
    "[converge]\nlevels = 2\n",
    "[time]\ndt = -1\n",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        cli.parse_config(text)


def test_order8_allowed_on_small_grid():
    cfg = cli.parse_config("[grid]\nn1 = 8\nn2 = 8\nn3 = 9\n[diagnostics]\nenergy_order = 8\n"
                           "allow_order8 = yes\n")
    assert cfg.energy_order == 8


def test_hash_ignores_key_order_and_output_dir():
    a = cli.parse_config("[grid]\nn1 = 8\nn2 = 12\n[output]\ndir = x\n")
    b = cli.parse_config("[output]\ndir = y\n[grid]\nn2 = 12\nn1 = 8\n")
    c = cli.parse_config("[grid]\nn1 = 8\nn2 = 16\n")
    assert a.hash == b.hash != c.hash


@settings(max_examples=20, deadline=None)
@given(n1=st.integers(4, 64), dt=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_config_round_trips_through_echo(n1, dt, seed):
    cfg = cli.RunConfig(n1=n1, dt=dt, seed=seed)
    echoed = cfg.to_dict()
    assert cli.RunConfig(**{**echoed, "beta": tuple(echoed["beta"])}) == cfg


def test_run_static_equilibrium(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["run", "--config", str(write(tmp_path, STATIC)), "--out", str(out)])
    assert rc == cli.EXIT_OK
    h, rows = dg.read_series(out / "series.csv")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config_hash"] == h
    assert summary["config"]["recipe"] == "static"
    for key in ("E_total", "J_drift", "q_boundary_drift"):
        assert max(r[key] for r in rows) - min(r[key] for r in rows) <= 1e-14
    assert summary["summary"]["energy_drift"] == 0.0
    assert summary["effective_A0"] >= 1.0


def test_inline_comments_are_ignored():
    cfg = cli.parse_config("[grid]\nn1 = 12   ; tangential points\nmode = torus ; periodic\nn3 = 12\n")
    assert (cfg.n1, cfg.mode) == (12, "torus")


def test_run_config_error_exit_code(tmp_path):
    cfg = write(tmp_path, "[grid]\nn1 = 2\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_IO


def test_numerics_error_exit_code(tmp_path):
    text = STATIC.replace("t_end = 0.02", "t_end = 1.0\ndt = 0.5")
    assert cli.main(["run", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) \
        == cli.EXIT_NUMERICS


def test_apriori_halt(tmp_path):
    # the static state has no Taylor sign, so a halting monitor stops the run
    text = STATIC + "[diagnostics]\nhalt_on_apriori = true\n"
    assert cli.main(["run", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) \
        == cli.EXIT_NUMERICS


def test_runs_are_bit_identical(tmp_path):
    text = """
[grid]
n1 = 8
n2 = 8
n3 = 9
[recipe]
order = 1
[diagnostics]
energy_cadence = 2
energy_order = 2
coevolve_b = true
[output]
snapshot_every = 2
[time]
t_end = 0.01
"""
    cfg = write(tmp_path, text)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    first = tmp_path / "first"
    shutil.move(str(out), str(first))
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert any(str(f).endswith(".bin") for f in files)
    for f in files:
        assert (first / f).read_bytes() == (out / f).read_bytes(), f
    rows = dg.read_series(out / "series.csv")[1]
    assert rows[0]["energy_functional"] is not None and rows[1]["energy_functional"] is None
    assert rows[0]["frozen_field_residual"] == 0.0


def test_verify_geometry_and_norms(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["verify", "--suite", "geometry", "--out", str(out)]) == cli.EXIT_OK
    report = json.loads((out / "verify_geometry.json").read_text())
    assert report["passed"]
    piola = report["studies"][0]
    assert piola["metrics"]["identity_piola"] <= 1e-14
    assert cli.main(["verify", "--suite", "norms", "--out", str(out)]) == cli.EXIT_OK


def test_verify_detects_corrupted_inverse(tmp_path):
    cfg = write(tmp_path, "[verify]\ncorrupt_a = 1e-3\n")
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", str(cfg), "--suite", "goodunknown", "--out", str(out)]) \
        == cli.EXIT_VERIFY
    report = json.loads((out / "verify_goodunknown.json").read_text())
    assert not report["passed"]
    assert report["studies"][0]["metrics"]["tangential_k8_relative"] > 1e-6


def test_converge_dt_on_torus(tmp_path):
    text = """
[grid]
n1 = 24
n2 = 24
n3 = 24
mode = torus
[recipe]
v_amp = 0.3
taylor = 0.2
[time]
dt = 0.01
t_end = 0.1
cfl = 0.5
"""
    out = tmp_path / "o"
    assert cli.main(["converge", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    report = json.loads((out / "converge_dt.json").read_text())
    assert report["fits"]["relative_energy_drift"]["slope"] >= 3.5
    hashes = {dg.read_series(out / f"series_dt{j}.csv")[0] for j in range(3)}
    assert hashes == {report["config_hash"]}


def test_converge_spatial_axes(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["converge", "--axis", "n3", "--out", str(out)]) == 0
    n3 = json.loads((out / "converge_n3.json").read_text())["fits"]["piola_max"]
    assert n3["status"] == "ok" and n3["slope"] >= 3.5
    assert cli.main(["converge", "--axis", "n_tan", "--out", str(out)]) == 0
    assert json.loads((out / "converge_n_tan.json").read_text())["fits"]["piola_max"]["status"] == "floor"
    assert cli.main(["converge", "--axis", "dt", "--levels", "2", "--out", str(out)]) == cli.EXIT_CONFIG


def test_initdata_writes_snapshot_and_jet(tmp_path):
    out = tmp_path / "o"
    cfg = write(tmp_path, "[grid]\nn1 = 12\nn2 = 12\nn3 = 17\n[recipe]\nq_pert = 0.01\n")
    assert cli.main(["initdata", "--config", str(cfg), "--order", "2", "--out", str(out)]) == 0
    report = json.loads((out / "initdata.json").read_text())
    assert max(report["compatibility_residuals"]) <= 1e-8
    jet = json.loads((out / "initdata" / "jet.json").read_text())
    assert jet["order"] == 2 and jet["config_hash"] == report["config_hash"]
    from mhdlab.state import load_snapshot

    grid, state = load_snapshot(out / "initdata")
    assert grid.shape == (12, 12, 17) and state.t == 0.0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mhdlab", "run", "--config",
                           str(write(tmp_path, "[grid]\nn1 = 2\n"))], capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_CONFIG
    assert "n1 must be" in proc.stderr
