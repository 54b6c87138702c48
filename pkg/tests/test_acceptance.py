"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained-policy criteria share one 1M-step training run. Set
``HAMPPO_ACCEPT_CHECKPOINT`` to reuse an existing checkpoint instead, or
``HAMPPO_ACCEPT_STEPS`` to shorten the run for a smoke check (the printed
lines then report the reduced step count).
"""
from __future__ import annotations

import math
import os
from dataclasses import replace

import numpy as np
import pytest

from hamppo import action_tree as at
from hamppo.action_tree import HierAction, LowAction
from hamppo.baselines import LawnmowerCarpet, LawnmowerReactive, RandomPolicy, lawnmower_next
from hamppo.evaluation import noise_sweep, sweep
from hamppo.field_env import FieldEnv, RewardParams
from hamppo.network import forward, init_params, load_checkpoint, save_checkpoint
from hamppo.noise import GaussianNoise, NoNoise
from hamppo.ppo import NetworkPolicy, TrainConfig, gae, total_loss, train
from hamppo.scenario import InfectionMap, ScenarioConfig, battery_budget

ACCEPT_STEPS = int(os.environ.get("HAMPPO_ACCEPT_STEPS", 1_000_000))
EVAL_SEEDS = 5
SCENARIO = ScenarioConfig(dims=(10, 10), infection_range=(0.2, 0.3), randomness="low", initiation="corners",
                          noise=GaussianNoise(0.15))


# ---------------------------------------------------------------- 1. masking


def test_c1_masking_fidelity(criterion):
    uniform = at.mask_and_normalize(np.ones(5))
    masked = at.mask_and_normalize(np.ones(5), np.array([1, 0, 1, 1, 1], dtype=bool))
    ok_probs = np.allclose(uniform, 0.2, atol=1e-15) and \
        np.max(np.abs(masked - [0.25, 0, 0.25, 0.25, 0.25])) <= 1e-9

    rng = np.random.default_rng(2024)
    n = 1_000_000
    high = np.ones((n, 2), dtype=bool)
    high[: n // 2, 1] = False  # half the states forbid deep scouting
    low = np.ones((n, 6), dtype=bool)
    low[:, 2] = low[:, 3] = False  # left and right masked (crop row)
    low[n // 4:, 5] = False
    tl = rng.normal(size=(n, 2))
    ll = rng.normal(size=(n, 6))
    b0, b1, _ = at.sample_batch(tl, ll, high, low, rng)
    invalid = int((~high[np.arange(n), b0]).sum() + (~low[np.arange(n), b1]).sum())
    criterion(1, "masking fidelity", ok_probs and invalid == 0,
              f"masked probs {np.round(masked, 12).tolist()}, {invalid} invalid in {n} samples")


# ---------------------------------------------------------------- 2. gradients


def _random_batch(rng, params, n, obs_dim):
    obs = rng.normal(size=(n, obs_dim))
    high = np.ones((n, 2), dtype=bool)
    high[:, 1] = rng.random(n) < 0.6
    low = rng.random((n, 6)) < 0.7
    low[np.arange(n), rng.integers(0, 4, n)] = True
    low[np.arange(n), rng.integers(4, 6, n)] = True
    tl, ll, _ = forward(params, obs)
    b0, b1, lp = at.sample_batch(tl, ll, high, low, rng)
    return {"obs": obs, "high_mask": high, "low_mask": low, "b0": b0, "b1": b1,
            "old_log_prob": lp + rng.normal(scale=0.3, size=n),
            "advantages": rng.normal(size=n), "returns": rng.normal(size=n)}


def test_c2_gradient_correctness(criterion):
    rng = np.random.default_rng(7)
    cfg = TrainConfig(hidden=(16, 8), total_steps=0)
    worst_rel, worst_masked = 0.0, 0.0
    for trial in range(100):
        params = init_params(6, (16, 8), seed=trial, dtype=np.float64)
        for k in params:
            params[k] = params[k] + rng.normal(scale=0.3, size=params[k].shape)
        batch = _random_batch(rng, params, 8, 6)
        _, grads, _ = total_loss(batch, params, cfg)
        num, ana = [], []
        for k, w in params.items():
            for idx in rng.choice(w.size, size=min(w.size, 5), replace=False):
                orig = w.flat[idx]
                w.flat[idx] = orig + 1e-5
                lp = total_loss(batch, params, cfg)[0]
                w.flat[idx] = orig - 1e-5
                lm = total_loss(batch, params, cfg)[0]
                w.flat[idx] = orig
                num.append((lp - lm) / 2e-5)
                ana.append(grads[k].flat[idx])
        num, ana = np.array(num), np.array(ana)
        worst_rel = max(worst_rel, np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana)))

        tl, ll, _ = forward(params, batch["obs"])
        _, _, cache = at.batch_log_prob_entropy(tl, ll, batch["high_mask"], batch["low_mask"],
                                                batch["b0"], batch["b1"])
        g0, g1 = at.batch_backward(cache, rng.normal(size=8), rng.normal(size=8))
        worst_masked = max(worst_masked, np.abs(g0[~batch["high_mask"]]).max(initial=0.0),
                           np.abs(g1[~batch["low_mask"]]).max(initial=0.0))

    worked = np.eye(5)[0] - at.mask_and_normalize(np.ones(5))  # d log softmax(z)[0] / dz
    exact = np.allclose(worked, [0.8, -0.2, -0.2, -0.2, -0.2], atol=1e-15, rtol=0)
    criterion(2, "gradient correctness", worst_rel <= 1e-4 and worst_masked <= 1e-6 and exact,
              f"worst relative error {worst_rel:.2e}, masked-logit gradient {worst_masked:.1e}, "
              f"worked gradient {np.round(worked, 15).tolist()}")


# ---------------------------------------------------------------- 3. GAE


def test_c3_gae_oracle(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        r, v = rng.normal(size=64), rng.normal(size=64)
        d = rng.random(64) < 0.1
        boot = rng.normal()
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        adv, _ = gae(r, v, d, boot, gamma, lam)
        nxt = np.append(v[1:], boot)
        delta = r + gamma * nxt * (1.0 - d) - v
        brute = np.zeros(64)
        for t in range(64):
            weight = 1.0
            for k in range(t, 64):
                brute[t] += weight * delta[k]
                if d[k]:
                    break
                weight *= gamma * lam
        worst = max(worst, np.max(np.abs(adv - brute)))
    criterion(3, "GAE oracle equivalence", worst <= 1e-10, f"max deviation {worst:.1e} over 1000 sequences")


# ---------------------------------------------------------------- 4. reward and budget arithmetic


def _sigmoid_eta(t_inf, t50):
    return math.exp(-(t_inf + t50)) / (1 + math.exp(-(t_inf + t50)))


def test_c4_reward_and_budget_arithmetic(criterion):
    p = RewardParams(uay=10, ppb=1, upp=0.05, kappa_rev=5, t50=3, t_inf=(1, 2, 4), p_inf=(0.33, 0.66, 1.0))
    m = InfectionMap.from_text("12\n3.")
    env = FieldEnv(ScenarioConfig(dims=(2, 2), fixed_map=m, budget=100, noise=NoNoise(), start="top-left"), p)
    env.reset(0)
    # headland (0,0) -> (0,1) -> I1 at (1,1), sprayed -> I3 at (2,1), skipped -> healthy (2,2), sprayed
    got, want = [], []

    def step(action, hint, expected):
        got.append(env.step(action, hint).reward)
        want.append(expected)

    e1, e3 = _sigmoid_eta(1, 3), _sigmoid_eta(4, 3)
    step(HierAction.scout(LowAction.RIGHT), 0.3, 0.0)
    step(HierAction.scout(LowAction.DOWN), 0.3, e1 * 10 * 1 * 0.3)
    step(HierAction.deep_scout(True), 0.0, e1 * 10 - 0.05)
    step(HierAction.scout(LowAction.DOWN), 0.6, _sigmoid_eta(4, 3) * 10 * 0.6)
    step(HierAction.deep_scout(False), 0.0, -(1 - e3) * 1.0 * 10)
    step(HierAction.scout(LowAction.DOWN), 0.0, 0.0)  # onto the headland
    step(HierAction.scout(LowAction.RIGHT), 0.0, 0.0)
    step(HierAction.scout(LowAction.UP), 0.0, 0.0)  # healthy (2,2), first visit
    step(HierAction.deep_scout(True), 0.0, -0.05)
    step(HierAction.scout(LowAction.DOWN), 0.0, 0.0)
    step(HierAction.scout(LowAction.UP), 0.0, -5.0)  # healthy revisit
    exact = got == want
    battery = env.state.battery_remaining == 100 - (8 * 1 + 3 * 5)
    budgets = (battery_budget(ScenarioConfig(infection_range=(0.2, 0.3))),
               battery_budget(ScenarioConfig(infection_range=(0.3, 0.4))))
    criterion(4, "reward and budget arithmetic", exact and battery and budgets == (230, 290),
              f"{len(got)} rewards exact={exact}, battery={env.state.battery_remaining}, budgets={budgets}")


# ---------------------------------------------------------------- 5-7. trained policy


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    ckpt = os.environ.get("HAMPPO_ACCEPT_CHECKPOINT")
    if ckpt:
        return load_checkpoint(ckpt)["params"], "reused checkpoint"
    out = tmp_path_factory.mktemp("accept")
    res = train([SCENARIO], TrainConfig(total_steps=ACCEPT_STEPS, seed=0), log_path=out / "train_log.jsonl")
    save_checkpoint(out / "final.npz", res.params, res.optimizer)
    return res.params, f"{ACCEPT_STEPS} steps"


@pytest.fixture(scope="session")
def table(trained):
    params, _ = trained
    pols = {"ham-ppo": NetworkPolicy(params), "carpet": LawnmowerCarpet(),
            "reactive": LawnmowerReactive(), "random": RandomPolicy()}
    return sweep(pols, [SCENARIO], seeds=EVAL_SEEDS)


def test_c5_yield_ordering(criterion, trained, table):
    ham, carpet, rnd = (table.mean(p, "yield_pct") for p in ("ham-ppo", "carpet", "random"))
    criterion(5, "yield ordering", ham > carpet + 10 and rnd < 20,
              f"{trained[1]}: ham-ppo {ham:.1f}%, carpet {carpet:.1f}%, random {rnd:.1f}%, "
              f"reactive {table.mean('reactive', 'yield_pct'):.1f}%")


def test_c6_cost_ordering(criterion, table):
    ham, carpet, reactive = (table.mean(p, "pesticide_cost") for p in ("ham-ppo", "carpet", "reactive"))
    criterion(6, "pesticide cost ordering", ham < carpet and reactive < carpet,
              f"$/acre ham-ppo {ham:.3f}, reactive {reactive:.3f}, carpet {carpet:.3f}")


def test_c7_noise_trend(criterion, trained):
    rep = noise_sweep({"ham-ppo": NetworkPolicy(trained[0])}, SCENARIO, seeds=EVAL_SEEDS, include_reference=False)
    ok, parts = True, []
    for fam in ("gaussian", "flip"):
        series = [rep.mean("ham-ppo", "yield_pct", noise=fam, noise_level=v) for v in (0.05, 0.2, 0.5, 0.7)]
        drop = series[-1] <= series[0] - 5
        monotone = all(b <= a + 3 for a, b in zip(series, series[1:]))
        ok &= drop and monotone
        parts.append(f"{fam} " + "/".join(f"{s:.1f}" for s in series))
    criterion(7, "noise degradation trend", ok, "; ".join(parts))


# ---------------------------------------------------------------- 8. coverage


def test_c8_lawnmower_coverage(criterion):
    failures = 0
    for start in ("top-left", "bottom-left", "top-right", "bottom-right"):
        for l in range(1, 21):
            for w in range(1, 21):
                m = InfectionMap.from_text("\n".join(["." * w] * l))
                env = FieldEnv(ScenarioConfig(dims=(l, w), fixed_map=m, budget=10**6, noise=NoNoise(), start=start))
                env.reset(0)
                entries = np.zeros((l + 2, w + 2), dtype=int)
                while not env.state.visited[1:-1, 1:-1].all():
                    env.step(lawnmower_next(env.state.position, env.state.visited))
                    entries[env.state.position] += 1
                failures += int(not (entries[1:-1, 1:-1] == 1).all())
    criterion(8, "lawnmower coverage", failures == 0, f"{failures} of 1600 grid/start combinations failed")


# ---------------------------------------------------------------- 9. determinism


def test_c9_determinism(criterion, tmp_path):
    small = ScenarioConfig(dims=(4, 4), infection_range=(0.2, 0.4), budget=60)
    cfg = TrainConfig(total_steps=512, rollout_length=128, minibatch_size=32, epochs=2, hidden=(16,), seed=5)
    runs = []
    for tag in ("a", "b"):
        res = train([small], cfg, log_path=tmp_path / f"{tag}.jsonl")
        pols = {"ham-ppo": NetworkPolicy(res.params), "reactive": LawnmowerReactive(), "random": RandomPolicy()}
        csv = sweep(pols, [small, replace(small, initiation="center")], seeds=3).to_csv()
        runs.append(((tmp_path / f"{tag}.jsonl").read_bytes(), csv))
    logs_same = runs[0][0] == runs[1][0]
    csv_same = runs[0][1] == runs[1][1]
    criterion(9, "determinism", logs_same and csv_same,
              f"training logs identical={logs_same}, sweep CSVs identical={csv_same}")
