import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracbsde.catalog import catalog_list, get_entry
from fracbsde.cli import main, to_json
from fracbsde.config import ConfigError, config_hash, parse_config, serialize_config

BASIC = """
[problem]
alpha = 0.75
T = 0.25
n = 1
m = 1
A = [0.0]
f = { kind = "affine", F0 = [0.0], F1 = [0.5], F2 = [0.0] }
xi = { c0 = [0.0], c1 = [1.0], c2 = [0.0] }

[grid]
steps = 16

[monte_carlo]
paths = 2000
basis_degree = 2
seed = 3

[solver]
max_iterations = 20
tolerance = 1e-3
"""


def test_parse_basic():
    cfg = parse_config(BASIC)
    assert cfg.grid_steps == 16 and cfg.path_count == 2000 and cfg.seed == 3
    assert cfg.problem.c == pytest.approx(0.25)
    assert cfg.kernel_mode.value == "KernelForm"


def test_round_trip():
    cfg = parse_config(BASIC)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


@settings(max_examples=30, deadline=None)
@given(
    alpha=st.floats(0.51, 0.99),
    T=st.floats(0.01, 5.0),
    steps=st.integers(2, 512),
    seed=st.integers(0, 2**63),
    a=st.floats(-1, 1),
    f0=st.floats(-3, 3),
    mode=st.sampled_from(["KernelForm", "ProofForm"]),
)
def test_round_trip_property(alpha, T, steps, seed, a, f0, mode):
    text = f"""
[problem]
alpha = {alpha!r}
T = {T!r}
A = [{a!r}]
f = {{ F0 = [{f0!r}] }}
[grid]
steps = {steps}
[monte_carlo]
seed = {seed}
[solver]
kernel_mode = "{mode}"
"""
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)) == cfg


def test_output_dir_not_hashed():
    a = parse_config(BASIC + '\n[output]\ndir = "one"\n')
    b = parse_config(BASIC + '\n[output]\ndir = "two"\n')
    assert config_hash(a) == config_hash(b)
    c = parse_config(BASIC.replace("seed = 3", "seed = 4"))
    assert config_hash(a) != config_hash(c)


def test_all_errors_reported():
    bad = BASIC.replace("alpha = 0.75", "alpha = 1.2").replace("steps = 16", "steps = 0").replace(
        "tolerance = 1e-3", 'tolerance = -1\nkernel_mode = "Other"'
    )
    with pytest.raises(ConfigError) as info:
        parse_config(bad)
    msg = str(info.value)
    for part in ("alpha", "steps", "tolerance", "kernel_mode"):
        assert part in msg


@pytest.mark.parametrize(
    "text",
    [
        "[problem\n",
        "[nonsense]\nx = 1\n",
        BASIC + "\n[grid2]\n",
        BASIC.replace("n = 1", "n = 1\nbogus = 2"),
        BASIC.replace("A = [0.0]", "A = [0.0, 1.0]"),
        BASIC.replace("F1 = [0.5]", "F1 = [true]"),
        "[grid]\nsteps = 4\n",
        BASIC.replace("m = 1", "m = 1\nlipschitz_c = 0.1"),
    ],
)
def test_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_catalog_config():
    cfg = parse_config("[grid]\nsteps = 8\n", "frac-ode")
    assert cfg.catalog_id == "frac-ode"
    assert cfg.problem.A[0, 0] == -0.5
    assert parse_config(serialize_config(cfg)) == cfg
    with pytest.raises(ConfigError):
        parse_config("", "no-such-problem")


def test_catalog_entries():
    ids = {e.id for e in catalog_list()}
    assert {"trivial", "terminal-brownian", "constant-drift", "affine-small-T", "frac-ode", "classical-limit"} <= ids
    assert get_entry("small-T-affine").id == "affine-small-T"
    for e in catalog_list():
        s = e.summary()
        assert s["provenance"] in ("[TRIVIAL]", "[DERIVED]")
        assert s["tolerance"] > 0


def test_to_json_precision():
    text = to_json({"a": 0.1, "b": [1, 2.5], "c": None, "d": True, "e": float("nan")})
    doc = json.loads(text)
    assert doc["a"] == 0.1 and doc["c"] is None and doc["d"] is True and doc["e"] is None
    assert "0.10000000000000001" in text


def _run(tmp_path, extra="", catalog=None, command="solve", *flags):
    cfg = tmp_path / "run.toml"
    body = BASIC if catalog is None else "[grid]\nsteps = 16\n[monte_carlo]\npaths = 2000\n"
    cfg.write_text(body + extra + f'\n[output]\ndir = "{tmp_path / "out"}"\n')
    argv = ["--config", str(cfg), "--command", command, *flags]
    if catalog:
        argv += ["--catalog", catalog]
    return main(argv)


def test_cli_solve(tmp_path, capsys):
    assert _run(tmp_path) == 0
    rep = json.loads((tmp_path / "out" / "solve_report.json").read_text())
    assert rep["converged"] and rep["command"] == "solve"
    assert len(rep["config_hash"]) == 64
    assert (tmp_path / "out" / "x_summary.csv").read_text().startswith("node,component,mean,std")


def test_cli_nonconvergence_exit(tmp_path):
    # affine-small-T needs several Picard steps to reach 1e-9
    cfg_text = BASIC.replace("max_iterations = 20", "max_iterations = 1").replace("tolerance = 1e-3", "tolerance = 1e-9")
    p = tmp_path / "nc.toml"
    p.write_text(cfg_text + f'\n[output]\ndir = "{tmp_path / "nc"}"\n')
    assert main(["--config", str(p), "--command", "solve"]) == 1


def test_cli_config_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[problem]\nalpha = 3\n")
    assert main(["--config", str(p), "--command", "solve"]) == 2
    assert "alpha" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.toml"), "--command", "solve"]) == 2
    assert main(["--command", "solve"]) == 2
    assert main(["--catalog", "trivial"]) == 2


@pytest.mark.parametrize(
    "command,report",
    [
        ("check-contraction", "contraction_report.json"),
        ("verify-lemma", "lemma_report.json"),
        ("coincidence", "coincidence_report.json"),
        ("ml-eval", "ml_eval.json"),
    ],
)
def test_cli_commands(tmp_path, command, report):
    assert _run(tmp_path, "", "terminal-brownian", command) == 0
    rep = json.loads((tmp_path / "out" / report).read_text())
    assert rep["command"] == command and rep["catalog"] == "terminal-brownian"


def test_cli_ml_eval_value(tmp_path):
    assert _run(tmp_path, "", "trivial", "ml-eval", "--alpha", "0.5", "--z", "-1.0") == 0
    rep = json.loads((tmp_path / "out" / "ml_eval.json").read_text())
    assert rep["value"] == pytest.approx(math.exp(1) * math.erfc(1), rel=1e-13)


def test_cli_dump_fields(tmp_path):
    assert _run(tmp_path, "", None, "solve", "--dump-fields", "3") == 0
    lines = (tmp_path / "out" / "y_field.csv").read_text().splitlines()
    assert lines[0] == "path,t_node,s_node,row,col,value"
    assert {int(l.split(",")[0]) for l in lines[1:]} == {0, 1, 2}
    x = (tmp_path / "out" / "x_field.csv").read_text().splitlines()
    assert len(x) == 1 + 3 * 17


def test_cli_list_catalog(capsys):
    assert main(["--list-catalog"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == len(catalog_list())
    assert json.loads(out[0])["id"] == "trivial"


def test_cli_bit_identical_reports(tmp_path):
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        assert _run(d, "", "affine-small-T", "solve") == 0
    assert (tmp_path / "a" / "out" / "solve_report.json").read_bytes() == (tmp_path / "b" / "out" / "solve_report.json").read_bytes()
