import json

import pytest

from bmvd.cli import main
from bmvd.config import ConfigError, build_drift, default_config, parse_config

from conftest import CONFIGS


def test_defaults_are_complete():
    cfg = default_config()
    assert cfg["model"] == {"eps": 0.25, "p": 1.0}
    assert build_drift(cfg) is None


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    parse_config(path.read_text())


@pytest.mark.parametrize("text,key,line", [
    ("[model]\neps = 0.5\n", "model.eps", 2),
    ("[model]\n\nfoo = 1\n", "model.foo", 3),
    ("[nope]\nx = 1\n", "nope", 1),
    ("[grid]\nh = \"a\"\n", "grid.h", 2),
    ("[bounds]\nregimes = [1, 9]\n", "bounds.regimes", 2),
    ("[drift]\npreset = \"smooth_bump\"\nparams = { wdth = 1.0 }\n", "drift.params.wdth", 3),
    ("[simulate]\nn_paths = 0\n", "simulate.n_paths", 2),
])
def test_config_errors_carry_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert exc.value.line == line


def test_syntax_error_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config("[run\nseed = 1\n")
    assert exc.value.key == "<syntax>"


def test_cli_bad_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[pde]\nT = -1.0\n")
    code = main(["pde", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "pde.T" and err["line"] == 2


def test_cli_bad_seed(tmp_path, capsys):
    assert main(["pde", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["key"] == "--seed"


def test_cli_module_error_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[simulate]\ntask = \"girsanov_check\"\nn_paths = 10\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert (tmp_path / "error.json").exists()


SMALL = """
[grid]
h = 0.02
L_leg = 3.0
L_plane = 3.0
[pde]
T = 0.2
n_out = 4
flux_tol = 0.05
"""


def test_cli_pde_outputs_and_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["pde", "--config", str(cfg), "--out", str(out), "--strict"]) == 0
        outs.append(out)
    for name in ("pde.json", "pde_kernel.csv", "pde_mass.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    summary = json.loads((outs[0] / "pde.json").read_text())
    assert summary["checks"]["mass"] and summary["config"]["grid"]["h"] == 0.02


def test_cli_simulate_reproducible_across_workers(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[simulate]\nt = 0.05\ndt = 5e-3\nn_paths = 40000\nn_bins = 10\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a), "--workers", "1"]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b), "--workers", "2"]) == 0
    assert (a / "simulate_density.csv").read_bytes() == (b / "simulate_density.csv").read_bytes()


def test_cli_strict_and_report(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL + "mass_tol = 1e-30\n")
    out = tmp_path / "o"
    assert main(["pde", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["pde", "--config", str(cfg), "--out", str(out), "--strict"]) == 3
    assert main(["report", "--out", str(out), "--strict"]) == 3
    rep = json.loads((out / "report.json").read_text())
    assert rep["all_passed"] is False
    assert "FAIL  pde: mass" in capsys.readouterr().out
