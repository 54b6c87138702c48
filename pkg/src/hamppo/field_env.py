"""Grid-field POMDP: transitions, reward, battery accounting and observations.

The full grid is the ``l x w`` crop interior surrounded by a one-cell empty
headland ring. Crop rows run vertically. Cell values follow
:class:`~hamppo.scenario.HealthStatus`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .action_tree import (ActionMask, ActionType, HierAction, InvalidActionError, MOVE_DELTAS,
                          compute_masks)
from .noise import NoiseModel
from .scenario import HealthStatus, InfectionMap, ScenarioConfig, battery_budget, generate

SCOUT_COST = 1
DEEP_SCOUT_COST = 5
MAX_STEPS_FACTOR = 4

REWARD_COMPONENTS = ("sc_inf", "sc_healthy", "dsc_spray_inf", "dsc_nospray_inf", "dsc_spray_healthy")


class EpisodeClosedError(RuntimeError):
    pass


# ---------------------------------------------------------------- yield model

def attainable_yield_fraction(t_inf: float, t50: float) -> float:
    """exp(-(t_inf + t50)) / (1 + exp(-(t_inf + t50)))"""
    if t_inf < 0 or t50 < 0:
        raise ValueError(f"durations must be non-negative, got t_inf={t_inf}, t50={t50}")
    x = t_inf + t50
    # logistic of -x; for x >= 0 this form never overflows
    e = math.exp(-x)
    return e / (1.0 + e)


def yield_loss(eta_y: float, p_inf: float) -> float:
    if not 0.0 <= eta_y <= 1.0:
        raise ValueError(f"eta_y must lie in [0, 1], got {eta_y}")
    if not 0.0 <= p_inf <= 1.0:
        raise ValueError(f"p_inf must lie in [0, 1], got {p_inf}")
    return (1.0 - eta_y) * p_inf


@dataclass(frozen=True)
class RewardParams:
    """Economic constants. ``t_inf`` and ``p_inf`` are per level I1, I2, I3.

    The durations default to a zero offset so attainable yield runs from 0.5
    (I1) down to 0.27 (I3), which keeps spray rewards in the same range as the
    revisit penalty. With ``t50=3`` every spray reward would be below 0.2.
    """

    uay: float = 10.0
    ppb: float = 1.0
    upp: float = 0.05
    kappa_rev: float = 5.0
    t50: float = 0.0
    t_inf: tuple[float, float, float] = (0.0, 0.5, 1.0)
    p_inf: tuple[float, float, float] = (0.33, 0.66, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "t_inf", tuple(float(x) for x in self.t_inf))
        object.__setattr__(self, "p_inf", tuple(float(x) for x in self.p_inf))
        for name in ("uay", "ppb", "upp", "kappa_rev", "t50"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if len(self.t_inf) != 3 or len(self.p_inf) != 3:
            raise ValueError("t_inf and p_inf need one entry per infection level")
        if any(t < 0 for t in self.t_inf):
            raise ValueError("t_inf entries must be >= 0")
        if not all(0.0 <= p <= 1.0 for p in self.p_inf):
            raise ValueError("p_inf entries must lie in [0, 1]")
        if not self.p_inf[0] < self.p_inf[1] < self.p_inf[2]:
            raise ValueError("p_inf must be strictly increasing across I1 < I2 < I3")

    def eta(self, level: int) -> float:
        return attainable_yield_fraction(self.t_inf[level - 1], self.t50)

    def loss(self, level: int) -> float:
        return yield_loss(self.eta(level), self.p_inf[level - 1])


# ---------------------------------------------------------------- state

@dataclass
class FieldState:
    health: np.ndarray  # full grid incl. headland, int8 HealthStatus codes
    position: tuple[int, int]
    visited: np.ndarray
    sprayed: np.ndarray
    battery_remaining: int
    budget: int
    spray_charges_remaining: Optional[int] = None
    step_count: int = 0
    steps_used: int = 0
    done: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.health.shape

    def copy(self) -> "FieldState":
        return replace(self, health=self.health.copy(), visited=self.visited.copy(),
                       sprayed=self.sprayed.copy())

    def masks(self) -> ActionMask:
        return compute_masks(self.position, self.sprayed)

    @property
    def interior(self) -> tuple[slice, slice]:
        return slice(1, self.shape[0] - 1), slice(1, self.shape[1] - 1)


def embed_map(infection: InfectionMap) -> np.ndarray:
    """Surround the interior map with an empty headland ring."""
    l, w = infection.shape
    grid = np.full((l + 2, w + 2), HealthStatus.EMPTY, dtype=np.int8)
    grid[1:-1, 1:-1] = infection.grid
    return grid


@dataclass
class Observation:
    """What the policy sees: noisy belief for unvisited cells, exact everything else."""

    belief: np.ndarray
    visited: np.ndarray
    sprayed: np.ndarray
    position: np.ndarray  # one-hot grid
    battery_fraction: float
    agent_position: tuple[int, int]

    def encode(self, dtype=np.float32) -> np.ndarray:
        """Flat vector ``[belief | visited | sprayed | position | battery]``."""
        n = self.belief.size
        out = np.empty(4 * n + 1, dtype=dtype)
        out[:n] = self.belief.ravel()
        out[n:2 * n] = self.visited.ravel()
        out[2 * n:3 * n] = self.sprayed.ravel()
        out[3 * n:4 * n] = self.position.ravel()
        out[-1] = self.battery_fraction
        return out

    def masks(self) -> ActionMask:
        return compute_masks(self.agent_position, self.sprayed)


def encoding_size(dims: tuple[int, int]) -> int:
    return 4 * (dims[0] + 2) * (dims[1] + 2) + 1


def observe(state: FieldState, noise: NoiseModel, rng: np.random.Generator) -> Observation:
    """Noisy infection indicator for unvisited cells, exact level encoding for visited ones.

    Visited cells report ``level / 3`` (0 for healthy and empty cells).
    """
    health = state.health
    noisy = noise.apply((health > 0).astype(np.float64), rng)
    exact = np.where(health > 0, health / 3.0, 0.0)
    return _compose(state, noisy, exact)


# ---------------------------------------------------------------- rewards

def reward_scout(state: FieldState, dest: tuple[int, int], spray_prob_hint: float,
                 params: RewardParams) -> tuple[float, Optional[str]]:
    """Reward for entering ``dest`` (evaluated before ``dest`` is marked visited)."""
    h = int(state.health[dest])
    if h > 0 and not state.visited[dest]:
        return params.eta(h) * params.uay * params.ppb * spray_prob_hint, "sc_inf"
    if h == HealthStatus.HEALTHY and state.visited[dest]:
        return -params.kappa_rev, "sc_healthy"
    return 0.0, None


def reward_deep_scout(state: FieldState, spray: bool, params: RewardParams) -> tuple[float, Optional[str]]:
    h = int(state.health[state.position])
    if h == HealthStatus.EMPTY:
        raise InvalidActionError("deep scouting is not possible on an empty headland cell")
    if h > 0:
        if spray:
            return params.eta(h) * params.uay * params.ppb - params.upp, "dsc_spray_inf"
        return -params.loss(h) * params.uay * params.ppb, "dsc_nospray_inf"
    if spray:
        return -params.upp, "dsc_spray_healthy"
    return 0.0, None


@dataclass
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


SprayHint = Union[float, Callable[[Observation], float]]


class FieldEnv:
    """Seedable environment around one :class:`ScenarioConfig`.

    ``resample_noise`` draws fresh observation noise on every step; by default
    the noisy survey of unvisited cells is drawn once per episode and stays
    fixed, like a single drone pass before the robot starts.
    """

    def __init__(self, scenario: ScenarioConfig, reward_params: Optional[RewardParams] = None,
                 resample_noise: bool = False):
        self.scenario = scenario
        self.params = reward_params or RewardParams()
        self.resample_noise = resample_noise
        self.state: Optional[FieldState] = None
        self.initial_health: Optional[np.ndarray] = None
        self._rng = np.random.default_rng(0)
        self._survey: Optional[np.ndarray] = None
        self._exact: Optional[np.ndarray] = None
        self._obs: Optional[Observation] = None
        self._max_steps = 0

    @property
    def noise(self) -> NoiseModel:
        return self.scenario.noise

    def reset(self, seed) -> tuple[FieldState, Observation]:
        ss = np.random.SeedSequence(seed)
        map_seed, noise_seed, survey_seed = ss.spawn(3)
        infection = generate(self.scenario, map_seed)
        health = embed_map(infection)
        budget = battery_budget(self.scenario)
        self.state = FieldState(
            health=health,
            position=self.scenario.start_cell(),
            visited=np.zeros(health.shape, dtype=bool),
            sprayed=np.zeros(health.shape, dtype=bool),
            battery_remaining=budget,
            budget=budget,
            spray_charges_remaining=self.scenario.spray_charges,
            done=budget <= 0 or self.scenario.spray_charges == 0,
        )
        self.state.visited[self.state.position] = True
        self.initial_health = health.copy()
        self._rng = np.random.default_rng(noise_seed)
        self._survey = None
        if not self.resample_noise:
            indicator = (health > 0).astype(np.float64)
            self._survey = self.noise.apply(indicator, np.random.default_rng(survey_seed))
        self._exact = np.where(health > 0, health / 3.0, 0.0)
        self._max_steps = MAX_STEPS_FACTOR * budget
        self._obs = self._observe()
        return self.state, self._obs

    def _observe(self) -> Observation:
        if self._survey is None:
            return observe(self.state, self.noise, self._rng)
        return _compose(self.state, self._survey, self._exact)

    @property
    def observation(self) -> Observation:
        return self._obs

    def masks(self) -> ActionMask:
        return self.state.masks()

    def step(self, action: HierAction, spray_prob_hint: SprayHint = 0.0) -> StepOutcome:
        """Apply ``action``.

        ``spray_prob_hint`` is the acting policy's probability of spraying the
        destination cell on its next action. A callable receives the
        post-step observation and is only invoked when that probability
        actually enters the reward.
        """
        s = self.state
        if s is None:
            raise EpisodeClosedError("call reset() before step()")
        if s.done:
            raise EpisodeClosedError("episode is over; call reset()")
        if not s.masks().allows(action):
            raise InvalidActionError(f"{action} is masked at position {s.position}")

        if action.b0 == ActionType.SCOUT:
            di, dj = MOVE_DELTAS[action.b1]
            dest = (s.position[0] + di, s.position[1] + dj)
            cost = SCOUT_COST
            # evaluated on the pre-move state; the infected-cell term is linear in the hint
            value, tag = reward_scout(s, dest, 1.0, self.params)
            s.position = dest
            s.visited[dest] = True
        else:
            cost = DEEP_SCOUT_COST
            value, tag = reward_deep_scout(s, action.spray, self.params)
            if action.spray:
                s.sprayed[s.position] = True
                if s.spray_charges_remaining is not None:
                    s.spray_charges_remaining -= 1

        s.battery_remaining = max(0, s.battery_remaining - cost)
        s.steps_used += cost
        s.step_count += 1
        s.done = (s.battery_remaining <= 0
                  or (s.spray_charges_remaining is not None and s.spray_charges_remaining <= 0)
                  or s.step_count >= self._max_steps)
        self._obs = self._observe()

        if tag == "sc_inf":
            hint = spray_prob_hint(self._obs) if callable(spray_prob_hint) else float(spray_prob_hint)
            if not 0.0 <= hint <= 1.0:
                raise ValueError(f"spray_prob_hint must lie in [0, 1], got {hint}")
            value = value * hint
        info = dict.fromkeys(REWARD_COMPONENTS, 0.0)
        if tag is not None:
            info[tag] = value
        reward = sum(info[k] for k in REWARD_COMPONENTS)
        info["battery_spent"] = cost
        return StepOutcome(self._obs, reward, s.done, info)


def _compose(state: FieldState, noisy: np.ndarray, exact: np.ndarray) -> Observation:
    belief = np.where(state.visited, exact, noisy)
    pos = np.zeros(state.health.shape, dtype=np.float64)
    pos[state.position] = 1.0
    frac = state.battery_remaining / state.budget if state.budget > 0 else 0.0
    return Observation(belief, state.visited.copy(), state.sprayed.copy(), pos,
                       float(min(max(frac, 0.0), 1.0)), state.position)


# ---------------------------------------------------------------- trajectory export

def trajectory_record(step: int, position, action: HierAction, info: dict, battery: int) -> dict:
    return {
        "step": step,
        "position": [int(position[0]), int(position[1])],
        "action": str(action),
        "reward": {k: info[k] for k in REWARD_COMPONENTS},
        "battery": int(battery),
    }


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
