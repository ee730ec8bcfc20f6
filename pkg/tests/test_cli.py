import numpy as np
import pytest

from proxobs.cli import apply_overrides, load_config, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_prox_absolute_example(capsys):
    code, out, _ = run(capsys, "prox", "--loss", "absolute", "--alpha", "1",
                       "--x", "5", "--a", "1", "--b", "0")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "z: 4"
    assert lines[1].startswith("oracle_gap:")
    assert float(lines[1].split()[1]) < 1e-6


def test_prox_vapnik_dead_zone(capsys):
    code, out, _ = run(capsys, "prox", "--loss", "vapnik", "--eps", "0.5",
                       "--alpha", "1", "--x", "0.3", "--a", "1")
    assert code == 0
    assert out.splitlines()[0] == "z: 0.3"


def test_prox_lasso_prints_sparse_component(capsys):
    code, out, _ = run(capsys, "prox", "--loss", "lasso", "--lam", "1",
                       "--gamma", "1", "--x", "6", "--a", "1")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "z: 5"
    assert lines[1] == "phi: 4"


def test_prox_usage_errors(capsys):
    code, _, err = run(capsys, "prox", "--loss", "lasso", "--x", "5", "--a", "1")
    assert code == 2
    assert "gamma" in err
    code, _, err = run(capsys, "prox", "--loss", "absolute", "--x", "1,2",
                       "--a", "1")
    assert code == 2
    code, _, err = run(capsys, "prox", "--loss", "absolute", "--x", "0,0",
                       "--a", "0,0")
    assert code == 2


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()


def write_config(path, extra=""):
    path.write_text(
        "system: linear\n"
        "horizon: 40\n"
        "realizations: 2\n"
        "seed: 11\n"
        "losses:\n"
        "  - {kind: absolute, lam: 0.1}\n"
        "  - {kind: quadratic, lam: 1.0}\n"
        "noise:\n"
        "  impulsive: {std: 10.0, dwell: 5}\n" + extra)


def test_experiment_writes_deterministic_csv(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg)
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    code, out, _ = run(capsys, "experiment", "--config", str(cfg),
                       "--output", str(out1))
    assert code == 0
    assert f"wrote {out1}" in out
    assert "steady-state error:" in out
    code, _, _ = run(capsys, "experiment", "--config", str(cfg),
                     "--output", str(out2))
    assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    header = out1.read_text().splitlines()[0]
    assert header == "t,absolute,quadratic"
    assert len(out1.read_text().splitlines()) == 41


def test_experiment_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg, extra="surprise: 1\n")
    out = tmp_path / "x.csv"
    code, _, err = run(capsys, "experiment", "--config", str(cfg),
                       "--output", str(out))
    assert code == 2
    assert "surprise" in err
    assert not out.exists()


def test_experiment_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "experiment", "--config",
                       str(tmp_path / "nope.yaml"), "--output",
                       str(tmp_path / "x.csv"))
    assert code == 2
    assert "cannot read config" in err


def test_simulate_runs_single_realization(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg)
    out = tmp_path / "sim.csv"
    code, _, _ = run(capsys, "simulate", "--config", str(cfg),
                     "--output", str(out), "--set", "realizations=50")
    assert code == 0
    assert out.exists()


def test_overrides_reach_nested_and_indexed_keys(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg)
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    run(capsys, "experiment", "--config", str(cfg), "--output", str(out1))
    code, _, _ = run(capsys, "experiment", "--config", str(cfg),
                     "--output", str(out2),
                     "--set", "noise.impulsive.std=20",
                     "--set", "losses.0.lam=0.2")
    assert code == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_override_unknown_path_fails(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg)
    code, _, err = run(capsys, "experiment", "--config", str(cfg),
                       "--output", str(tmp_path / "x.csv"),
                       "--set", "noise.impulse.std=20")
    assert code == 2
    assert "missing key" in err


def test_apply_overrides_parses_yaml_values():
    config = {"horizon": 10, "noise": {"impulsive": {"std": 1.0}}}
    apply_overrides(config, ["horizon=25", "noise.impulsive.std=2.5",
                             "dwell_sweep=[2, 5]"])
    assert config["horizon"] == 25
    assert config["noise"]["impulsive"]["std"] == 2.5
    assert config["dwell_sweep"] == [2, 5]


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(Exception):
        load_config(path)


def test_check_requires_config(capsys):
    code, _, err = run(capsys, "check")
    assert code == 2
    assert "needs --config" in err
    code, _, err = run(capsys, "check", "--config", "/does/not/exist.yaml")
    assert code == 2


def test_check_prints_certificates(tmp_path, capsys):
    cfg = tmp_path / "chk.yaml"
    cfg.write_text(
        "system: linear\n"
        "losses:\n"
        "  - {kind: absolute, lam: 0.1}\n"
        "check:\n"
        "  window: 2\n"
        "  bound: {c: 2.0, lam_decay: 0.5}\n")
    code, out, _ = run(capsys, "check", "--config", str(cfg))
    assert code == 0
    assert "[uco_grammian[T=2]]" in out
    assert "[decrease_condition[absolute]]" in out
    assert "[information_decrease]" in out
    assert "[robustness_bound[absolute]]" in out
    assert "satisfied: yes" in out
    assert "margin:" in out


def test_check_reports_unstable_toy_with_witness(tmp_path, capsys):
    cfg = tmp_path / "chk.yaml"
    cfg.write_text(
        "system: linear\n"
        "losses:\n"
        "  - {kind: absolute, lam: 1.0e-6}\n")
    code, out, _ = run(capsys, "check", "--config", str(cfg))
    assert code == 0
    assert "satisfied: no" in out
    assert "witness:" in out


def test_float_output_uses_twelve_significant_digits(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    write_config(cfg)
    out = tmp_path / "a.csv"
    run(capsys, "experiment", "--config", str(cfg), "--output", str(out))
    cell = out.read_text().splitlines()[1].split(",")[1]
    assert len(cell.replace(".", "").replace("-", "").lstrip("0")) <= 12
    assert float(cell) > 0.0
