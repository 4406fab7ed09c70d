"""Harness contracts: config validation, determinism, manifests, compare."""

import configparser
from pathlib import Path

import numpy as np
import pytest

from duffbench import cli

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


FAST_SINDY = """
[experiment]
method = sindy
seed = 11
out = {out}

[simulator]
n = 256
"""


def test_unknown_method_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, """
[experiment]
method = quantum-leap
""")
    code = cli.main(["run", cfg])
    assert code == 2
    assert "method" in capsys.readouterr().err


def test_missing_config_file_is_config_error(tmp_path, capsys):
    code = cli.main(["run", str(tmp_path / "nope.cfg")])
    assert code == 2


def test_bad_value_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, """
[experiment]
method = sindy
seed = not-a-number
""")
    code = cli.main(["run", cfg])
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_sindy_run_and_artifacts(tmp_path):
    out = tmp_path / "sindy"
    cfg = write_cfg(tmp_path, FAST_SINDY.format(out=out))
    assert cli.main(["run", cfg]) == 0
    assert (out / "model.csv").exists()
    assert (out / "equation.txt").exists()
    assert (out / "metrics.csv").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "config_hash" in manifest
    assert "seed 11" in manifest


def test_byte_identical_reruns(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cfg = write_cfg(tmp_path, """
[experiment]
method = ukf
seed = 5

[simulator]
n = 128

[ukf]
noise_ratio = 0.085
""")
    assert cli.main(["run", cfg, "--out", str(out_a)]) == 0
    assert cli.main(["run", cfg, "--out", str(out_b)]) == 0
    for name in ("estimates.csv", "params.csv", "metrics.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_manifest_lists_every_consumed_key(tmp_path):
    out = tmp_path / "sindy"
    cfg_path = write_cfg(tmp_path, FAST_SINDY.format(out=out))
    cfg = cli.Config.from_file(cfg_path)
    cli.run_experiment(cfg)
    manifest = (out / "manifest.txt").read_text()
    listed = {line.strip().split(" = ")[0]
              for line in manifest.splitlines() if " = " in line}
    assert set(cfg.consumed) == listed
    assert "simulator.n" in listed


def test_seed_and_out_overrides(tmp_path):
    out = tmp_path / "override"
    cfg = write_cfg(tmp_path, FAST_SINDY.format(out=tmp_path / "ignored"))
    assert cli.main(["run", cfg, "--seed", "99", "--out", str(out)]) == 0
    assert "seed 99" in (out / "manifest.txt").read_text()
    assert not (tmp_path / "ignored").exists()


def test_simulate_command(tmp_path):
    out = tmp_path / "sim"
    cfg = write_cfg(tmp_path, f"""
[experiment]
method = sindy
out = {out}

[simulator]
n = 64
""")
    assert cli.main(["simulate", cfg]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,u,v,a,f"
    assert len(lines) == 65


def test_compare_single_directory(tmp_path, capsys):
    out = tmp_path / "one"
    cfg = write_cfg(tmp_path, FAST_SINDY.format(out=out))
    cli.main(["run", cfg])
    capsys.readouterr()
    assert cli.main(["compare", str(out)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "metric,one"
    assert "residual_rel" in table


def test_compare_skips_missing_with_warning(tmp_path, capsys):
    assert cli.main(["compare", str(tmp_path / "ghost")]) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert captured.out.strip() == "metric,"


def test_compare_empty_list(tmp_path, capsys):
    assert cli.main(["compare"]) == 0
    assert capsys.readouterr().out.strip() == "metric,"


def test_gp_methods_through_cli(tmp_path):
    outs = {}
    for method in ("gp-se", "gp-sdof"):
        out = tmp_path / method
        cfg = write_cfg(tmp_path, f"""
[experiment]
method = {method}
seed = 2025
out = {out}

[{method}]
stride = 12
restarts = 4
steps = 120
""", name=f"{method}.cfg")
        assert cli.main(["run", cfg]) == 0
        outs[method] = cli.read_metrics(out / "metrics.csv")
        header = (out / "result.csv").read_text().splitlines()[0]
        assert header == "t,u_true,mean,sd"
    assert outs["gp-sdof"]["rmse_u"] < outs["gp-se"]["rmse_u"]


def test_shipped_configs_parse_and_name_valid_methods():
    for path in sorted(CONFIG_DIR.glob("*.cfg")):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        assert parser.read(path)
        method = parser.get("experiment", "method")
        assert method in cli.METHODS, path.name
