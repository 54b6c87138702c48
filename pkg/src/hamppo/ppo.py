"""PPO-clip with GAE over the masked two-level action tree."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import action_tree as at
from .field_env import FieldEnv, Observation, RewardParams, encoding_size
from .network import (DEFAULT_HIDDEN, Adam, ArchitectureError, architecture, backward,
                      clip_by_global_norm, forward, init_params, load_checkpoint, save_checkpoint)
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    rollout_length: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epsilon: float = 0.2
    ent_coef: float = 0.02
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 1_000_000
    seed: int = 0
    normalize_advantage: bool = True
    hidden: tuple = DEFAULT_HIDDEN
    mask_constant: float = at.MASK_CONSTANT
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        def check(name, ok, rule):
            if not ok:
                raise ValueError(f"{name}={getattr(self, name)!r} out of range: {rule}")
        check("learning_rate", self.learning_rate > 0, "must be > 0")
        check("rollout_length", self.rollout_length >= 1, "must be >= 1")
        check("minibatch_size", 1 <= self.minibatch_size, "must be >= 1")
        check("epochs", self.epochs >= 0, "must be >= 0")
        check("gamma", 0.0 <= self.gamma <= 1.0, "must lie in [0, 1]")
        check("gae_lambda", 0.0 <= self.gae_lambda <= 1.0, "must lie in [0, 1]")
        check("epsilon", 0.0 < self.epsilon < 1.0, "must lie in (0, 1)")
        check("ent_coef", self.ent_coef >= 0, "must be >= 0")
        check("vf_coef", self.vf_coef >= 0, "must be >= 0")
        check("max_grad_norm", self.max_grad_norm > 0, "must be > 0")
        check("total_steps", self.total_steps >= 0, "must be >= 0")
        check("checkpoint_interval", self.checkpoint_interval >= 0, "must be >= 0")
        check("hidden", len(self.hidden) >= 1 and all(h > 0 for h in self.hidden), "positive widths")
        check("mask_constant", self.mask_constant < -1e3, "must be a large negative number")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------- advantage estimation

def gae(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks that the episode ended after step ``t``; the value of
    the following state is then taken as zero and accumulation restarts.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    returns = adv + values
    # recomputed from returns so that returns - values == advantages holds bit-for-bit
    return returns - values, returns


def ppo_clip_term(ratio, advantage, epsilon: float):
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1 - epsilon, 1 + epsilon) * advantage)


def ppo_clip_grad(ratio, advantage, epsilon: float):
    """d/d(ratio) of :func:`ppo_clip_term`: the advantage while the unclipped branch is active, else 0."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    unclipped = ratio * advantage <= np.clip(ratio, 1 - epsilon, 1 + epsilon) * advantage
    return np.where(unclipped, advantage, 0.0)


# ---------------------------------------------------------------- loss

def total_loss(batch: dict, params: dict, config: TrainConfig):
    """PPO loss (to be minimized) and its gradient with respect to ``params``.

    ``loss = -mean(clip term) + vf_coef * mean((V - R)^2) - ent_coef * mean(entropy)``

    ``batch`` holds ``obs``, ``high_mask``, ``low_mask``, ``b0``, ``b1``,
    ``old_log_prob``, ``advantages`` and ``returns``.
    """
    (type_logits, low_logits, value), acts = forward(params, batch["obs"], cache=True)
    type_logits = type_logits.astype(np.float64)
    low_logits = low_logits.astype(np.float64)
    value = value.astype(np.float64)
    log_prob, entropy, tree_cache = at.batch_log_prob_entropy(
        type_logits, low_logits, batch["high_mask"], batch["low_mask"], batch["b0"], batch["b1"],
        config.mask_constant)

    adv = np.asarray(batch["advantages"], dtype=np.float64)
    if config.normalize_advantage and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(adv)
    log_ratio = log_prob - batch["old_log_prob"]
    ratio = np.exp(log_ratio)
    policy_obj = ppo_clip_term(ratio, adv, config.epsilon)
    value_err = value - batch["returns"]
    policy_loss = -policy_obj.mean()
    value_loss = np.mean(value_err ** 2)
    entropy_mean = entropy.mean()
    loss = policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy_mean
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss: policy={policy_loss} value={value_loss} "
                                 f"entropy={entropy_mean}")

    d_log_prob = -ppo_clip_grad(ratio, adv, config.epsilon) * ratio / n
    d_entropy = np.full(n, -config.ent_coef / n)
    d_type, d_low = at.batch_backward(tree_cache, d_log_prob, d_entropy)
    d_value = config.vf_coef * 2.0 * value_err / n
    grads = backward(params, acts, d_type, d_low, d_value)
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy_mean),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.epsilon)),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
    }
    return loss, grads, stats


# ---------------------------------------------------------------- acting

class NetworkPolicy:
    """Acts with the masked two-level policy of a parameter set.

    Forward passes are cached per observation object, so the spray hint
    computed for a destination cell is reused when acting from it.
    """

    name = "ham-ppo"

    def __init__(self, params: dict, deterministic: bool = False, mask_constant: float = at.MASK_CONSTANT):
        self.params = params
        self.deterministic = deterministic
        self.C = mask_constant
        self._cache_key = None
        self._cache_val = None

    def evaluate(self, obs: Observation):
        if self._cache_key is not obs:
            self._cache_val = forward(self.params, obs.encode(self.params["type.W"].dtype))
            self._cache_key = obs
        return self._cache_val

    def spray_hint(self, obs: Observation) -> float:
        type_logits, low_logits, _ = self.evaluate(obs)
        return at.spray_probability(type_logits, low_logits, obs.masks(), self.C)

    def spray_given_deep_scout(self, obs: Observation) -> float:
        """P(spray | deep scout) under the masked spray slice."""
        _, low_logits, _ = self.evaluate(obs)
        p = at.mask_and_normalize(low_logits[at.SPRAY_SLOTS], obs.masks().low[at.SPRAY_SLOTS], self.C)
        return float(p[0])

    def act(self, env: FieldEnv, rng: np.random.Generator):
        obs = env.observation
        type_logits, low_logits, _ = self.evaluate(obs)
        mask = obs.masks()
        if self.deterministic:
            p0 = at.mask_and_normalize(type_logits, mask.high, self.C)
            b0 = int(np.argmax(p0))
            g = at.GROUPS[b0]
            p1 = at.mask_and_normalize(low_logits[g], mask.low[g], self.C)
            action = at.HierAction(at.ActionType(b0), at.LowAction(g.start + int(np.argmax(p1))))
        else:
            action, _ = at.sample_hierarchical(type_logits, low_logits, mask, rng, self.C)
        return action, self.spray_hint


# ---------------------------------------------------------------- rollouts

@dataclass
class RolloutBuffer:
    capacity: int
    obs_dim: int
    dtype: type = np.float32

    def __post_init__(self):
        n = self.capacity
        self.obs = np.zeros((n, self.obs_dim), dtype=self.dtype)
        self.high_mask = np.zeros((n, 2), dtype=bool)
        self.low_mask = np.zeros((n, 6), dtype=bool)
        self.b0 = np.zeros(n, dtype=np.int64)
        self.b1 = np.zeros(n, dtype=np.int64)
        self.log_prob = np.zeros(n)
        self.value = np.zeros(n)
        self.reward = np.zeros(n)
        self.done = np.zeros(n, dtype=bool)
        self.spray_hint = np.zeros(n)
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None
        self.size = 0

    def add(self, obs_vec, mask: at.ActionMask, action: at.HierAction, log_prob, value, reward, done,
            spray_hint=0.0) -> None:
        if self.size >= self.capacity:
            raise IndexError("rollout buffer is full")
        t = self.size
        self.obs[t] = obs_vec
        self.high_mask[t] = mask.high
        self.low_mask[t] = mask.low
        self.b0[t] = int(action.b0)
        self.b1[t] = int(action.b1)
        self.log_prob[t] = log_prob
        self.value[t] = value
        self.reward[t] = reward
        self.done[t] = done
        self.spray_hint[t] = spray_hint
        self.size += 1

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def compute_advantages(self, bootstrap_value: float, gamma: float, lam: float) -> None:
        if not self.full:
            raise RuntimeError("advantages are computed over a complete buffer only")
        self.advantages, self.returns = gae(self.reward, self.value, self.done, bootstrap_value, gamma, lam)

    def minibatch(self, idx) -> dict:
        return {"obs": self.obs[idx], "high_mask": self.high_mask[idx], "low_mask": self.low_mask[idx],
                "b0": self.b0[idx], "b1": self.b1[idx], "old_log_prob": self.log_prob[idx],
                "advantages": self.advantages[idx], "returns": self.returns[idx]}

    def reset(self) -> None:
        self.size = 0
        self.advantages = None
        self.returns = None


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: dict
    optimizer: Adam
    log: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    rng_state: Optional[dict] = None


def _check_scenarios(scenarios: Sequence[ScenarioConfig]) -> int:
    if not scenarios:
        raise ValueError("at least one scenario is required")
    dims = {s.dims for s in scenarios}
    if len(dims) != 1:
        raise ValueError(f"all training scenarios must share dims, got {sorted(dims)}")
    return encoding_size(next(iter(dims)))


def train(scenarios: Sequence[ScenarioConfig], config: TrainConfig,
          reward_params: Optional[RewardParams] = None, params: Optional[dict] = None,
          optimizer_state: Optional[dict] = None, rng_state: Optional[dict] = None,
          log_path=None, checkpoint_dir=None,
          on_update: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Collect masked rollouts, estimate advantages and run clipped PPO epochs.

    One scenario is drawn per episode. ``params``/``optimizer_state``/
    ``rng_state`` resume from a checkpoint. Deterministic for a fixed seed.
    """
    obs_dim = _check_scenarios(scenarios)
    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if params is None:
        params = init_params(obs_dim, config.hidden, seed=int(rng.integers(2**31)))
    elif architecture(params)["input_dim"] != obs_dim:
        raise ArchitectureError(f"checkpoint expects {architecture(params)['input_dim']} features, "
                                f"scenarios produce {obs_dim}")
    params = {k: v.copy() for k, v in params.items()}
    optimizer = Adam(params, lr=config.learning_rate)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
        optimizer.lr = config.learning_rate
    result = TrainResult(params, optimizer)
    if config.total_steps == 0:
        result.rng_state = rng.bit_generator.state
        return result

    envs = [FieldEnv(s, reward_params) for s in scenarios]
    policy = NetworkPolicy(params, mask_constant=config.mask_constant)
    buf = RolloutBuffer(config.rollout_length, obs_dim, params["type.W"].dtype.type)
    log_fh = open(log_path, "w") if log_path is not None else None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    def new_episode():
        env = envs[int(rng.integers(len(envs)))]
        env.reset(int(rng.integers(2**63)))
        return env

    env = new_episode()
    ep_return = 0.0
    steps = 0
    update = 0
    n_updates = math.ceil(config.total_steps / config.rollout_length)
    try:
        while update < n_updates:
            buf.reset()
            finished = []
            while not buf.full:
                if env.state.done:  # zero-budget scenarios end before the first step
                    env = new_episode()
                    continue
                obs = env.observation
                type_logits, low_logits, value = policy.evaluate(obs)
                mask = obs.masks()
                action, log_prob = at.sample_hierarchical(type_logits, low_logits, mask, rng,
                                                          config.mask_constant)
                hint_used = []

                def hint(next_obs):
                    p = policy.spray_hint(next_obs)
                    hint_used.append(p)
                    return p

                out = env.step(action, hint)
                buf.add(obs.encode(buf.dtype), mask, action, log_prob, value, out.reward, out.done,
                        hint_used[0] if hint_used else 0.0)
                ep_return += out.reward
                steps += 1
                if out.done:
                    finished.append(ep_return)
                    ep_return = 0.0
                    env = new_episode()
            last_done = bool(buf.done[-1])
            bootstrap = 0.0 if last_done else float(policy.evaluate(env.observation)[2])
            buf.compute_advantages(bootstrap, config.gamma, config.gae_lambda)

            stats_acc = []
            norms = []
            for _ in range(config.epochs):
                perm = rng.permutation(buf.capacity)
                for start in range(0, buf.capacity, config.minibatch_size):
                    idx = perm[start:start + config.minibatch_size]
                    _, grads, stats = total_loss(buf.minibatch(idx), params, config)
                    grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
                    optimizer.step(params, grads)
                    stats_acc.append(stats)
                    norms.append(norm)
            policy._cache_key = None  # parameters changed
            update += 1
            result.episode_returns.extend(finished)
            record = {
                "update": update,
                "steps": steps,
                "mean_reward": float(np.mean(finished)) if finished else None,
                "episodes": len(finished),
                "policy_loss": _mean(stats_acc, "policy_loss"),
                "value_loss": _mean(stats_acc, "value_loss"),
                "entropy": _mean(stats_acc, "entropy"),
                "grad_norm": float(np.mean(norms)) if norms else None,
                "approx_kl": _mean(stats_acc, "approx_kl"),
                "clip_fraction": _mean(stats_acc, "clip_fraction"),
            }
            result.log.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if on_update is not None:
                on_update(record)
            if (checkpoint_dir is not None and config.checkpoint_interval
                    and update % config.checkpoint_interval == 0):
                path = save_checkpoint(Path(checkpoint_dir) / f"ckpt_{update:05d}.npz", params, optimizer,
                                       rng.bit_generator.state, {"update": update, "steps": steps})
                result.checkpoints.append(path)
            log.debug("update %d: %s", update, record)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.rng_state = rng.bit_generator.state
    if checkpoint_dir is not None:
        path = save_checkpoint(Path(checkpoint_dir) / "final.npz", params, optimizer, result.rng_state,
                               {"update": update, "steps": steps, "config": _jsonable(asdict(config))})
        result.checkpoints.append(path)
    return result


def fine_tune(checkpoint, scenarios: Sequence[ScenarioConfig], config: TrainConfig,
              reward_params: Optional[RewardParams] = None, **kwargs) -> TrainResult:
    """Continue training a checkpoint (path or loaded dict) on ``scenarios`` only."""
    ckpt = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    obs_dim = _check_scenarios(scenarios)
    arch = architecture(ckpt["params"])
    if arch["input_dim"] != obs_dim:
        raise ArchitectureError(f"checkpoint expects {arch['input_dim']} features, scenarios produce {obs_dim}")
    if tuple(arch["hidden"]) != tuple(config.hidden):
        config = TrainConfig(**{**asdict(config), "hidden": tuple(arch["hidden"])})
    return train(scenarios, config, reward_params, params=ckpt["params"],
                 optimizer_state=ckpt["optimizer"], **kwargs)


def _mean(stats: list, key: str):
    return float(np.mean([s[key] for s in stats])) if stats else None


def _jsonable(d: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
