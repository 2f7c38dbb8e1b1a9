"""Config parsing and CLI contract tests: exit codes, outputs, determinism."""

import json

import pytest

from dnpde import cli, config as cfgmod

BASIC = """\
[grid]
dimension = 1
extent = 1.0
nodes = 16

[potentials]
gamma_kind = power
gamma_p = 2.0

[noise]
mode_count = 1
amplitudes = 0.5
gain = additive
master_seed = 20260809

[solver]
lambda_yosida = 0.5
dt = 0.03125
horizon = 0.25
u0_kind = eigenmode
u0_mode = 1
u0_amplitude = 1.0

[output]
prefix = demo
"""


def write_cfg(tmp_path, text, name="case.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def test_parse_roundtrip():
    rc = cfgmod.parse_config(BASIC)
    assert rc.get("grid", "dimension") == 1
    assert rc.get("noise", "amplitudes") == (0.5,)
    assert rc.get("solver", "scheme", "implicit_opt") == "implicit_opt"
    cfg, u0 = cfgmod.build_problem(rc)
    assert cfg.n_steps == 8
    assert u0.values.shape == (16,)
    assert cfg.noise.bound == 0.5   # default HS bound filled in


def test_parse_rejects_unknown_section():
    with pytest.raises(cfgmod.ConfigError) as err:
        cfgmod.parse_config("[mystery]\nx = 1\n")
    assert "line 1" in str(err.value)


def test_parse_rejects_unknown_key_with_line():
    text = BASIC.replace("gamma_p = 2.0", "gamma_p = 2.0\ngamma_typo = 3")
    with pytest.raises(cfgmod.ConfigError) as err:
        cfgmod.parse_config(text)
    assert "gamma_typo" in str(err.value) and "line" in str(err.value)


def test_parse_rejects_duplicates_and_bad_values():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_config("[grid]\ndimension = 1\ndimension = 2\n")
    with pytest.raises(cfgmod.ConfigError) as err:
        cfgmod.parse_config("[grid]\ndimension = one\n")
    assert "line 2" in str(err.value)
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_config("key_without_section = 1\n")


def test_missing_section_and_key_errors():
    rc = cfgmod.parse_config("[grid]\ndimension = 1\nextent = 1.0\nnodes = 16\n")
    with pytest.raises(cfgmod.ConfigError) as err:
        rc.require("solver", "dt")
    assert "[solver]" in str(err.value)


# ---------------------------------------------------------------------------
# cmd_run
# ---------------------------------------------------------------------------

def test_run_writes_two_outputs(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["demo_summary.json", "demo_trajectory.csv"]
    summary = json.loads((out / "demo_summary.json").read_text())
    assert summary["master_seed"] == 20260809
    assert summary["n_steps"] == 8
    lines = (out / "demo_trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# config_checksum=")
    assert lines[1] == "# master_seed=20260809"
    assert len(lines) == 3 + 9   # comments + header + 9 records


def test_run_state_dumps(tmp_path):
    text = BASIC.replace("prefix = demo", "prefix = demo\ndump_every = 4")
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    dumps = sorted(p.name for p in out.iterdir() if "state" in p.name)
    assert dumps == ["demo_state_000000.txt", "demo_state_000004.txt", "demo_state_000008.txt"]


def test_run_missing_grid_exits_2(tmp_path, capsys):
    text = BASIC.split("[potentials]", 1)[1]
    cfg = write_cfg(tmp_path, "[potentials]" + text)
    assert cli.main(["run", cfg]) == 2
    assert "[grid]" in capsys.readouterr().err


def test_run_unreadable_config_exits_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_run_unstable_semi_implicit_exits_3(tmp_path, capsys):
    text = BASIC.replace("[solver]", "[solver]\nscheme = semi_implicit")
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "stability" in err and ">" in err   # message shows the bound


def test_run_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", cfg, "--out", str(a), "--seed", "1"]) == 0
    assert cli.main(["run", cfg, "--out", str(b), "--seed", "2"]) == 0
    ta = (a / "demo_trajectory.csv").read_text()
    tb = (b / "demo_trajectory.csv").read_text()
    assert ta != tb


# ---------------------------------------------------------------------------
# cmd_sweep
# ---------------------------------------------------------------------------

def test_sweep_single_value_row(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    out = tmp_path / "out"
    assert cli.main([
        "sweep", cfg, "--param", "lambda_yosida", "--values", "0.5", "--out", str(out)
    ]) == 0
    lines = (out / "demo_sweep.csv").read_text().splitlines()
    rows = [l for l in lines if not l.startswith("#")][1:]
    assert len(rows) == 1 and rows[0].endswith(",ok")


def test_sweep_dt_coupling_checksums(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    out = tmp_path / "out"
    assert cli.main([
        "sweep", cfg, "--param", "dt", "--values", "0.03125,0.015625", "--out", str(out)
    ]) == 0
    lines = (out / "demo_sweep.csv").read_text().splitlines()
    rows = [l.split(",") for l in lines if not l.startswith("#")][1:]
    checksums = {row[-2] for row in rows}
    assert len(checksums) == 1          # one shared Brownian path
    assert all(row[-1] == "ok" for row in rows)
    # coarser level sees a nonempty Cauchy distance against the finer one
    assert rows[1][2] != "nan"


def test_sweep_h_and_mode_count(tmp_path):
    cfg = write_cfg(tmp_path, BASIC.replace("amplitudes = 0.5", "amp_c = 0.5\namp_q = 1.0"))
    out = tmp_path / "out"
    assert cli.main([
        "sweep", cfg, "--param", "h", "--values", "0.0625,0.03125", "--out", str(out)
    ]) == 0
    assert cli.main([
        "sweep", cfg, "--param", "mode_count", "--values", "1,2,4", "--out", str(out)
    ]) == 0


def test_sweep_invalid_key_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    assert cli.main(["sweep", cfg, "--param", "bogus", "--values", "1"]) == 2


def test_sweep_inner_failure_flushes_partial(tmp_path, capsys):
    # second dt value violates the semi-implicit stability bound
    text = BASIC.replace("[solver]", "[solver]\nscheme = semi_implicit")
    text = text.replace("dt = 0.03125", "dt = 0.0001")
    text = text.replace("horizon = 0.25", "horizon = 0.01")
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    code = cli.main([
        "sweep", cfg, "--param", "dt", "--values", "0.0001,0.005", "--out", str(out)
    ])
    assert code == 3
    lines = (out / "demo_sweep.csv").read_text().splitlines()
    rows = [l.split(",") for l in lines if not l.startswith("#")][1:]
    assert rows[0][-1] == "ok"
    assert rows[1][-1].startswith("failed_step")


# ---------------------------------------------------------------------------
# cmd_verify
# ---------------------------------------------------------------------------

def test_verify_selection_and_exit_codes(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    out = tmp_path / "out"
    assert cli.main(["verify", cfg, "--select", "duality", "--out", str(out)]) == 0
    lines = (out / "demo_verify.csv").read_text().splitlines()
    assert any("summation_by_parts_rel" in l for l in lines)
    assert cli.main(["verify", cfg, "--select", "nonsense", "--out", str(out)]) == 2


def test_verify_bad_noise_bound_fails(tmp_path):
    text = BASIC.replace("master_seed = 20260809", "master_seed = 20260809\nn_b = 0.1")
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["verify", cfg, "--select", "model", "--out", str(out)]) == 1


def test_verify_family_from_config(tmp_path):
    text = BASIC + "\n[verify]\nfamilies = duality\n"
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "o")]) == 0


def test_piecewise_potential_from_config(tmp_path):
    text = BASIC.replace(
        "gamma_kind = power\ngamma_p = 2.0",
        "gamma_kind = power\ngamma_p = 2.0\n"
        "beta_kind = piecewise\nbeta_xs = -1.0,0.0,1.0\nbeta_slopes = -2.0,0.0,2.0",
    )
    rc = cfgmod.parse_config(text)
    beta = cfgmod.build_potential(rc, "beta")
    assert beta.minimal_slope(0.5) == pytest.approx(1.0)
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["run", cfg, "--out", str(tmp_path / "out")]) == 0


def test_run_2d_config(tmp_path):
    text = BASIC.replace("dimension = 1", "dimension = 2").replace(
        "nodes = 16", "nodes = 10,12"
    ).replace("extent = 1.0", "extent = 1.0,2.0")
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    assert (out / "demo_trajectory.csv").exists()


def test_outputs_byte_identical_across_reruns(tmp_path):
    cfg = write_cfg(tmp_path, BASIC)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["run", cfg, "--out", str(out)]) == 0
    assert (a / "demo_trajectory.csv").read_bytes() == (b / "demo_trajectory.csv").read_bytes()
    assert (a / "demo_summary.json").read_bytes() == (b / "demo_summary.json").read_bytes()
