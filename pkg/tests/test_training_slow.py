from __future__ import annotations

import numpy as np
import pytest

from hamppo.evaluation import sweep
from hamppo.network import load_checkpoint
from hamppo.noise import GaussianNoise, NoNoise
from hamppo.ppo import NetworkPolicy, TrainConfig, fine_tune, train
from hamppo.scenario import InfectionMap, ScenarioConfig

pytestmark = pytest.mark.slow

SIX = InfectionMap.from_text("11....\n12....\n.2..3.\n....33\n......\n...2..\n")


def test_fixed_map_reward_improves_over_first_episodes():
    sc = ScenarioConfig(dims=(6, 6), fixed_map=SIX, budget=90, noise=GaussianNoise(0.15))
    res = train([sc], TrainConfig(total_steps=200_000, seed=1))
    returns = np.asarray(res.episode_returns)
    first, last = returns[:100].mean(), returns[-100:].mean()
    print(f"first 100 episodes {first:.2f}, last 100 episodes {last:.2f}")
    assert last > first


def test_entropy_collapses_without_bonus():
    sc = ScenarioConfig(dims=(3, 3), fixed_map=InfectionMap.from_text("1..\n.2.\n..3\n"), budget=30,
                        noise=NoNoise(), start="top-left")
    cfg = TrainConfig(total_steps=256 * 60, rollout_length=256, minibatch_size=64, epochs=4, hidden=(32, 32),
                      ent_coef=0.0, learning_rate=1e-3, seed=2)
    ent = np.array([r["entropy"] for r in train([sc], cfg).log])
    windows = ent.reshape(-1, 10).mean(axis=1)
    print("entropy by window of 10 updates:", np.round(windows, 3).tolist())
    assert np.all(np.diff(windows) <= 0)


def test_fine_tune_keeps_near_parity_on_subset(tmp_path):
    corners = ScenarioConfig(dims=(6, 6), infection_range=(0.2, 0.3), initiation="corners")
    center = ScenarioConfig(dims=(6, 6), infection_range=(0.2, 0.3), initiation="center")
    train([corners, center], TrainConfig(total_steps=100_000, seed=4), checkpoint_dir=tmp_path)
    glob = load_checkpoint(tmp_path / "final.npz")
    tuned = fine_tune(glob, [center], TrainConfig(total_steps=50_000, seed=5))
    rep = sweep({"global": NetworkPolicy(glob["params"]), "tuned": NetworkPolicy(tuned.params)},
                [center], seeds=range(1000, 1060))
    g, t = rep.mean("global", "yield_pct"), rep.mean("tuned", "yield_pct")
    print(f"center subset: global {g:.1f}%, fine-tuned {t:.1f}%")
    assert t >= g - 2
