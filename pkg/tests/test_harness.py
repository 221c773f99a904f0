import json
from pathlib import Path

import pytest

from hamlearn.harness import cli
from hamlearn.harness.config import ConfigError, load_config, parse_config
from hamlearn.harness.runner import CSV_COLUMNS, compare_curves, read_csv, run_experiment, write_csv

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "hamlearn" / "harness" / "configs"

BASE = """\
name: small
scenario: GD-a
mode: ff_output
model:
  kind: linear
dataset:
  name: iris_like
  seed: 0
epochs: 2
seed: 0
shuffle_seed: 0
"""


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_scenario_preset_fills_hyperparameters():
    cfg = parse_config(BASE)
    assert (cfg.sgd.gamma, cfg.sgd.mu, cfg.sgd.rho, cfg.tau) == (0.01, 0.0, 0.0, 1.0)
    assert cfg.tolerance.max_abs_dtheta == 1e-9
    mom = cfg.with_scenario("Mom-b")
    assert (mom.sgd.mu, mom.sgd.rho, mom.tau) == (0.1, 0.5, 0.5)


def test_config_round_trip():
    cfg = parse_config(BASE)
    assert parse_config(cfg.to_yaml()) == cfg


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    load_config(path)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as e:
        parse_config(BASE.replace("  seed: 0\n", "  seed: 0\n  colour: red\n", 1))
    assert e.value.line == 9 and "colour" in str(e.value)


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError) as e:
        parse_config("name: x\nmodel: [unclosed\n")
    assert e.value.line is not None and "YAML" in str(e.value)


def test_scenario_conflict_reports_line():
    with pytest.raises(ConfigError) as e:
        parse_config(BASE + "tau: 0.5\n")
    assert e.value.line == 12 and "conflicts" in str(e.value)


def test_invalid_combinations():
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("ff_output", "rnn_hl_bptt"))
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("scenario: GD-a", "scenario: custom\nsgd: {gamma: 0.1, rho: 1.0}\ntau: 1.0"))
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("epochs: 2", "epochs: -1"))


def test_zero_epochs_gives_empty_logs(tmp_path):
    res = run_experiment(parse_config(BASE.replace("epochs: 2", "epochs: 0")), tmp_path)
    assert res.passed and len(res.hl) == 0
    assert read_csv(tmp_path / "hl.csv") == []


def test_runs_are_bitwise_reproducible(tmp_path):
    cfg = parse_config(BASE)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for f in ("hl.csv", "oracle.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "hl.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)


def test_compare_curves(tmp_path):
    run_experiment(parse_config(BASE), tmp_path)
    same = compare_curves(tmp_path / "hl.csv", tmp_path / "hl.csv")
    assert same.passed and same.max_gap == 0.0
    rows = read_csv(tmp_path / "hl.csv")
    rows[7]["loss"] += 1e-6
    write_csv(tmp_path / "bad.csv", rows)
    rep = compare_curves(tmp_path / "hl.csv", tmp_path / "bad.csv")
    assert not rep.passed and rep.first_bad_row == 7
    write_csv(tmp_path / "short.csv", rows[:5])
    with pytest.raises(ValueError):
        compare_curves(tmp_path / "hl.csv", tmp_path / "short.csv")


def test_cli_exit_codes(tmp_path, capsys):
    cfg = write(tmp_path, BASE.replace("GD-a", "Mom-a"))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o"), "--json"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("[PASS]") and json.loads(out.splitlines()[1])["passed"]
    assert cli.main(["run", str(cfg), "--tol", "0"]) == 1
    assert cli.main(["run", str(write(tmp_path, BASE + "bogus: 1\n", "bad.yaml"))]) == 2
    assert "bad.yaml:12" in capsys.readouterr().err
    hl = str(tmp_path / "o" / "hl.csv")
    assert cli.main(["compare", hl, hl]) == 0
    assert cli.main(["compare", hl, str(tmp_path / "missing.csv")]) == 2


def test_sweep_over_scenarios(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    code = cli.main(["sweep", str(cfg), "--scenarios", "GD-a", "GD-b", "Mom-a", "Mom-b", "--out", str(tmp_path / "s")])
    assert code == 0
    summaries = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert len(summaries) == 4 and all(s["passed"] for s in summaries)
    assert capsys.readouterr().out.count("[PASS]") == 4
