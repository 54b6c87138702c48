from __future__ import annotations

import csv
import json

import numpy as np
import pytest
import yaml

from hamppo import cli
from hamppo.config import ConfigError, build_config, load_config, parse_override
from hamppo.evaluation import CSV_COLUMNS
from hamppo.field_env import RewardParams
from hamppo.noise import FlipNoise, GaussianNoise
from hamppo.ppo import TrainConfig
from hamppo.scenario import InfectionMap, ScenarioConfig


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "e.yaml").write_text("")
    cfg = load_config(tmp_path / "e.yaml")
    assert cfg.ppo == TrainConfig()
    assert cfg.reward == RewardParams()
    assert cfg.scenario == ScenarioConfig()
    assert cfg.scenarios == [cfg.scenario]
    snap = yaml.safe_load(cfg.snapshot())
    assert snap["ppo"]["learning_rate"] == 3e-4 and snap["ppo"]["rollout_length"] == 2048
    assert snap["ppo"]["minibatch_size"] == 64 and snap["ppo"]["epochs"] == 10
    assert snap["ppo"]["gamma"] == 0.99 and snap["ppo"]["gae_lambda"] == 0.95
    assert snap["ppo"]["epsilon"] == 0.2 and snap["ppo"]["ent_coef"] == 0.02
    assert snap["ppo"]["vf_coef"] == 0.5 and snap["ppo"]["max_grad_norm"] == 0.5


def test_override_echoed_in_snapshot(tmp_path):
    cfg = load_config(None, ["ppo.epsilon=0.1", "scenario.noise={kind: flip, p: 0.2}"])
    assert cfg.ppo.epsilon == 0.1
    assert cfg.scenario.noise == FlipNoise(0.2)
    path = cfg.write_snapshot(tmp_path)
    snap = yaml.safe_load(path.read_text())
    assert snap["ppo"]["epsilon"] == 0.1
    assert snap["scenario"]["noise"] == {"kind": "flip", "p": 0.2}


def test_range_error_names_field():
    with pytest.raises(ConfigError, match="gamma.*\\[0, 1\\]"):
        load_config(None, ["ppo.gamma=1.5"])


def test_each_problem_named_individually():
    raw = {"ppo": {"gama": 0.9, "epochs": "ten"}, "reward": {"uay": "x"}, "extra": {}}
    with pytest.raises(ConfigError) as exc:
        build_config(raw)
    msg = str(exc.value)
    for token in ("ppo.gama", "ppo.epochs", "reward.uay", "'extra'"):
        assert token in msg


def test_type_rules():
    assert build_config({"ppo": {"learning_rate": 1}}).ppo.learning_rate == 1
    with pytest.raises(ConfigError, match="rollout_length"):
        build_config({"ppo": {"rollout_length": 2.5}})
    with pytest.raises(ConfigError, match="normalize_advantage"):
        build_config({"ppo": {"normalize_advantage": 1}})
    with pytest.raises(ConfigError, match="dims"):
        build_config({"scenario": {"dims": [10]}})


def test_malformed_override():
    with pytest.raises(ConfigError, match="ppo.epsilon"):
        parse_override("ppo.epsilon")
    with pytest.raises(ConfigError):
        parse_override("ppo..x=1")


def test_scenarios_list_merges_over_base(tmp_path):
    (tmp_path / "m.txt").write_text("1.\n.2\n")
    (tmp_path / "s.yaml").write_text(yaml.safe_dump({
        "scenario": {"noise": {"kind": "gaussian", "sigma": 0.3}},
        "scenarios": [{"initiation": "center"}, {"dims": [2, 2], "map_file": "m.txt"}],
    }))
    cfg = load_config(tmp_path / "s.yaml")
    assert [s.initiation for s in cfg.scenarios] == ["center", "corners"]
    assert all(s.noise == GaussianNoise(0.3) for s in cfg.scenarios)
    assert np.array_equal(cfg.scenarios[1].fixed_map.grid, InfectionMap.from_text("1.\n.2\n").grid)


def test_bad_noise_and_scenario_values():
    with pytest.raises(ConfigError, match="noise"):
        build_config({"scenario": {"noise": {"kind": "gaussian", "sgima": 1}}})
    with pytest.raises(ConfigError, match="randomness"):
        build_config({"scenario": {"randomness": "medium"}})


def test_config_dir_env(tmp_path, monkeypatch):
    (tmp_path / "named.yaml").write_text("ppo: {epochs: 3}\n")
    monkeypatch.setenv("HAMPPO_CONFIG_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    assert load_config("named.yaml").ppo.epochs == 3
    with pytest.raises(ConfigError, match="not found"):
        load_config("missing.yaml")


# ---------------------------------------------------------------- CLI


def run(argv, capsys=None):
    code = cli.parse_and_dispatch([str(a) for a in argv])
    return code


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_and_dispatch(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("hamppo ")


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit):
        cli.parse_and_dispatch(["sweep", "--help"])
    text = capsys.readouterr().out
    for flag in ("--config", "--set", "--seed", "--out", "--policies", "--checkpoint", "--seeds", "--workers",
                 "--scenarios"):
        assert flag in text


def test_usage_errors(tmp_path, capsys):
    assert run(["eval", "--bogus", "--out", tmp_path]) == cli.EXIT_USAGE
    assert "--bogus" in capsys.readouterr().err
    assert run(["nope"]) == cli.EXIT_USAGE
    assert run(["eval", "--policies", "carpet,ufo", "--out", tmp_path]) == cli.EXIT_USAGE
    assert "ufo" in capsys.readouterr().err
    assert run(["eval", "--workers", "0", "--out", tmp_path]) == cli.EXIT_USAGE


def test_config_errors(tmp_path, capsys):
    assert run(["eval", "--set", "ppo.gamma=1.5", "--policies", "carpet", "--out", tmp_path]) == cli.EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err
    assert run(["eval", "--set", "ppo.epsilon", "--out", tmp_path]) == cli.EXIT_CONFIG
    assert "ppo.epsilon" in capsys.readouterr().err
    assert run(["eval", "--policies", "ham-ppo", "--out", tmp_path]) == cli.EXIT_CONFIG
    assert run(["eval", "--policies", "ham-ppo", "--checkpoint", tmp_path / "x.npz", "--out", tmp_path]) \
        == cli.EXIT_CONFIG
    assert run(["train", "--config", tmp_path / "none.yaml", "--out", tmp_path]) == cli.EXIT_CONFIG


def test_gen_scenario(tmp_path):
    (tmp_path / "s.yaml").write_text("scenario: {dims: [6, 5]}\n")
    out = tmp_path / "map.txt"
    assert run(["gen-scenario", "--config", tmp_path / "s.yaml", "--seed", 7, "--out", out]) == 0
    m = InfectionMap.from_text(out.read_text())
    assert m.shape == (6, 5) and 6 <= m.infected_count <= 9
    assert (tmp_path / "map.txt.config.yaml").exists()


SMALL = {"scenario": {"dims": [3, 3], "infection_range": [0.2, 0.4], "budget": 30},
         "ppo": {"rollout_length": 64, "minibatch_size": 32, "epochs": 1, "hidden": [8], "checkpoint_interval": 1}}


def test_train_eval_sweep_roundtrip(tmp_path):
    cfg_path = tmp_path / "t.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL))
    src = cfg_path.read_bytes()
    ck = tmp_path / "ckpt"
    assert run(["train", "--config", cfg_path, "--steps", 128, "--seed", 1, "--out", ck]) == 0
    assert sorted(p.name for p in ck.iterdir()) == ["ckpt_00001.npz", "ckpt_00002.npz", "final.npz",
                                                     "resolved_config.yaml", "train_log.jsonl"]
    log = [json.loads(line) for line in (ck / "train_log.jsonl").read_text().splitlines()]
    assert [r["update"] for r in log] == [1, 2]
    snap = yaml.safe_load((ck / "resolved_config.yaml").read_text())
    assert snap["ppo"]["total_steps"] == 128 and snap["ppo"]["seed"] == 1

    res = tmp_path / "res"
    assert run(["eval", "--config", cfg_path, "--checkpoint", ck / "final.npz",
                "--policies", "ham-ppo,carpet,reactive,lawnmower-optimal,random", "--seeds", 2, "--out", res]) == 0
    rows = list(csv.DictReader((res / "metrics.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 10
    assert cfg_path.read_bytes() == src  # inputs are never modified

    ft = tmp_path / "ft"
    assert run(["fine-tune", "--config", cfg_path, "--checkpoint", ck / "final.npz", "--steps", 64,
                "--out", ft]) == 0
    assert (ft / "final.npz").exists()

    traj = tmp_path / "traj.jsonl"
    assert run(["export-traj", "--config", cfg_path, "--checkpoint", ck / "final.npz", "--seed", 3,
                "--out", traj]) == 0
    assert all("battery" in json.loads(line) for line in traj.read_text().splitlines())


def test_train_log_byte_identical(tmp_path):
    cfg_path = tmp_path / "t.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL))
    for d in ("a", "b"):
        assert run(["train", "--config", cfg_path, "--steps", 128, "--out", tmp_path / d]) == 0
    assert (tmp_path / "a/train_log.jsonl").read_bytes() == (tmp_path / "b/train_log.jsonl").read_bytes()


def test_sweep_with_scenarios_file(tmp_path):
    (tmp_path / "grid.yaml").write_text(yaml.safe_dump({"scenarios": [
        {"infection_range": [0.2, 0.3], "randomness": r, "initiation": i}
        for r in ("low", "high") for i in ("corners", "center")]}))
    out = tmp_path / "out"
    assert run(["sweep", "--policies", "carpet,random", "--scenarios", tmp_path / "grid.yaml", "--seeds", 2,
                "--out", out]) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert len(rows) == 2 * 4 * 2
    snap = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert len(snap["scenarios"]) == 4
    first = (out / "metrics.csv").read_bytes()
    assert run(["sweep", "--policies", "carpet,random", "--scenarios", tmp_path / "grid.yaml", "--seeds", 2,
                "--out", out]) == 0
    assert (out / "metrics.csv").read_bytes() == first


def test_noise_and_extent_sweeps(tmp_path):
    out = tmp_path / "n"
    assert run(["noise-sweep", "--policies", "reactive", "--seeds", 1, "--set", "eval.noise_values=[0.1, 0.6]",
                "--out", out]) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert len(rows) == 1 + 2 * 2
    assert (out / "plot_yield_pct_vs_noise.csv").exists()
    out = tmp_path / "x"
    assert run(["extent-sweep", "--policies", "carpet", "--seeds", 1, "--out", out]) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    budgets = [int(r["budget"]) for r in rows]
    assert budgets[1:] == [230, 290, 350, 520]
    assert budgets[0] < 230  # 5-10% extent falls back to the count-based rule
