import json
from pathlib import Path

import pytest

from kgscatter.cli import main
from kgscatter.config import load_config, parse_samples
from kgscatter.errors import InvalidConfig

SMALL = """
[scenario]
name = "small"

[spacetime]
c = {{family = "constant", value = 1.0}}
h = {h}
V = {V}

[basis]
K = 8

[grid]
t_min = -6.0
t_max = 6.0
n_nodes = 25

[states]
samples = "5:12:3"
n_source = 61

[run]
out = "{out}"
stages = ["reduce", "powers", "riccati", "frame", "evolve", "states"]
"""

BUMP_H = ('{product = [{family = "exp_step", left = 0.0, right = 1.0}, '
          '{family = "cos_bump", amplitude = 0.3, mode = 1, base = 1.0}]}')


def write_config(tmp_path, name="cfg.toml", h="1.0", V="1.0", out=None):
    out = out or str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(SMALL.format(h=h, V=V, out=out))
    return path


def test_config_loads_examples():
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.toml")):
        cfg = load_config(p)
        assert cfg["basis"]["K"] >= 8


@pytest.mark.parametrize("text,expected", [("5:40:3", [5.0, 5 * 8 ** 0.5, 40.0]),
                                           ([1.0, 2.0], [1.0, 2.0])])
def test_parse_samples(text, expected):
    assert parse_samples(text) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["40:5:3", "5:40", "a:b:c", [2.0, 1.0]])
def test_parse_samples_rejects(text):
    with pytest.raises(InvalidConfig):
        parse_samples(text)


def test_run_ultrastatic(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    states = rep["stages"]["states"]
    assert states["vac_ref_distance"] <= 1e-8
    for w in ("vac", "ref", "in", "out"):
        assert states[w]["pass"]
    assert (tmp_path / "out" / "convergence_out.csv").read_text().startswith("t,increment\n")


def test_report_is_deterministic(tmp_path):
    a = write_config(tmp_path, "a.toml", h=BUMP_H, out=str(tmp_path / "a"))
    b = write_config(tmp_path, "b.toml", h=BUMP_H, out=str(tmp_path / "b"))
    for cfg in (a, b):
        assert main(["frame", "--config", str(cfg), "--seed", "7"]) == 0
    ra = (tmp_path / "a" / "report.json").read_bytes()
    rb = (tmp_path / "b" / "report.json").read_bytes()
    assert ra == rb


def test_cache_reuse(tmp_path):
    cfg = write_config(tmp_path, h=BUMP_H)
    assert main(["riccati", "--config", str(cfg)]) == 0
    first = (tmp_path / "out" / "report.json").read_bytes()
    assert main(["riccati", "--config", str(cfg)]) == 0
    log = (tmp_path / "out" / "run.log").read_text()
    assert "cache hit: riccati" in log
    assert (tmp_path / "out" / "report.json").read_bytes() == first


def test_state_subcommand(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["state", "--config", str(cfg), "--which", "vac"]) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["stages"]["state_vac"]["vac"]["pass"]


def test_converge_writes_csv(tmp_path):
    cfg = write_config(tmp_path, h=BUMP_H)
    assert main(["converge", "--config", str(cfg), "--samples", "4:16:5"]) == 0
    rows = (tmp_path / "out" / "convergence_out.csv").read_text().splitlines()
    assert rows[0] == "t,increment" and len(rows) == 5
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["convergence"]["samples"] == 5


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("K = 8", "K = -3"))
    assert main(["reduce", "--config", str(cfg)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_negative_mass_fails_at_reduce(tmp_path, capsys):
    cfg = write_config(tmp_path, V="-1.0")
    assert main(["run", "--config", str(cfg)]) == 3
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["error"]["stage"] == "reduce"
    assert "reduce" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "kgscatter" in capsys.readouterr().out
