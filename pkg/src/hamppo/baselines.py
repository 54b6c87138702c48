"""Non-learned and hybrid comparison policies.

Every policy exposes ``act(env, rng) -> (HierAction, spray_hint)`` where the
hint is the policy's probability of spraying the cell it moves onto.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import action_tree as at
from .action_tree import HierAction, LowAction
from .field_env import FieldEnv
from .network import ArchitectureError, architecture
from .noise import FlipNoise


def _unvisited_interior(visited: np.ndarray) -> np.ndarray:
    """Per interior column (full-grid column index), whether it still has unvisited crop cells."""
    inner = ~visited[1:-1, :]
    has = inner.any(axis=0)
    has[0] = has[-1] = False
    return has


def lawnmower_next(position: tuple[int, int], visited: np.ndarray) -> HierAction:
    """Serpentine traversal: run down a crop row, shift one column on the
    headland, run back up the next row.

    Stateless: the direction is recovered from which cells of the current
    column remain unvisited.
    """
    rows, cols = visited.shape
    i, j = position
    pending = _unvisited_interior(visited)
    interior_row = 0 < i < rows - 1
    interior_col = 0 < j < cols - 1

    if interior_col and pending[j]:
        column = ~visited[1:-1, j]  # column[r] is full-grid row r + 1
        if interior_row:
            if column[i:].any():
                return HierAction.scout(LowAction.DOWN)
            if column[:i - 1].any():
                return HierAction.scout(LowAction.UP)
        elif i == 0:
            return HierAction.scout(LowAction.DOWN)
        else:
            return HierAction.scout(LowAction.UP)

    if interior_row:
        # column finished (or side headland column): head to the nearer headland row
        return HierAction.scout(LowAction.DOWN if rows - 1 - i <= i else LowAction.UP)

    # on the top or bottom headland row
    targets = np.flatnonzero(pending)
    if len(targets) == 0:
        return _idle_move(position, visited.shape)
    dist = np.abs(targets - j)
    best = targets[dist == dist.min()]
    target = best.max()  # ties break to the right
    if target == j:
        return HierAction.scout(LowAction.DOWN if i == 0 else LowAction.UP)
    return HierAction.scout(LowAction.RIGHT if target > j else LowAction.LEFT)


def _idle_move(position, shape) -> HierAction:
    mask = at.compute_masks(position, np.zeros(shape, dtype=bool))
    for d in (LowAction.RIGHT, LowAction.DOWN, LowAction.LEFT, LowAction.UP):
        if mask.low[d]:
            return HierAction.scout(d)
    raise RuntimeError("no valid move")  # unreachable on grids with at least one cell


def _on_fresh_crop(env: FieldEnv) -> bool:
    s = env.state
    return s.masks().high[at.ActionType.DEEP_SCOUT]


class LawnmowerCarpet:
    name = "carpet"

    def act(self, env: FieldEnv, rng: np.random.Generator):
        return self.decide(env), 1.0

    def decide(self, env: FieldEnv) -> HierAction:
        if _on_fresh_crop(env):
            return HierAction.deep_scout(True)
        return lawnmower_next(env.state.position, env.state.visited)


class LawnmowerReactive:
    """Sprays when a flip-noised reading of the current cell says infected.

    The reading is redrawn on every decision.
    """

    name = "reactive"

    def __init__(self, flip_p: float = 0.15):
        self.sensor = FlipNoise(flip_p)

    def act(self, env: FieldEnv, rng: np.random.Generator):
        return self.decide(env, rng), self._trigger_probability

    def _trigger_probability(self, obs) -> float:
        # the destination is visited, so its belief is exact: spray unless the reading flips
        infected = obs.belief[obs.agent_position] > 0
        return 1.0 - self.sensor.p if infected else self.sensor.p

    def decide(self, env: FieldEnv, rng: np.random.Generator) -> HierAction:
        s = env.state
        if _on_fresh_crop(env):
            truth = np.array([1.0 if s.health[s.position] > 0 else 0.0])
            if self.sensor.apply(truth, rng)[0] > 0.5:
                return HierAction.deep_scout(True)
        return lawnmower_next(s.position, s.visited)


class LawnmowerOptimalSpray:
    """Lawnmower movement with the trained network's spray sub-policy.

    On a fresh crop cell: deep scout and spray iff P(spray | deep scout) > threshold.
    """

    name = "lawnmower-optimal"

    def __init__(self, params: dict, threshold: float = 0.5, expected_input_dim: Optional[int] = None):
        from .ppo import NetworkPolicy

        if expected_input_dim is not None and architecture(params)["input_dim"] != expected_input_dim:
            raise ArchitectureError(f"checkpoint expects {architecture(params)['input_dim']} features, "
                                    f"environment produces {expected_input_dim}")
        self.net = NetworkPolicy(params)
        self.threshold = threshold

    def act(self, env: FieldEnv, rng: np.random.Generator):
        return self.decide(env), self._hint

    def _hint(self, obs) -> float:
        if not obs.masks().high[at.ActionType.DEEP_SCOUT]:
            return 0.0
        return 1.0 if self.net.spray_given_deep_scout(obs) > self.threshold else 0.0

    def decide(self, env: FieldEnv) -> HierAction:
        s = env.state
        if _on_fresh_crop(env) and self.net.spray_given_deep_scout(env.observation) > self.threshold:
            return HierAction.deep_scout(True)
        return lawnmower_next(s.position, s.visited)


class RandomPolicy:
    """Uniform over valid types, then uniform over valid parameters."""

    name = "random"

    def act(self, env: FieldEnv, rng: np.random.Generator):
        return self.decide(env.state.masks(), rng), self._hint

    @staticmethod
    def _hint(obs) -> float:
        high = obs.masks().high
        return 0.5 / high.sum() if high[at.ActionType.DEEP_SCOUT] else 0.0

    @staticmethod
    def decide(mask: at.ActionMask, rng: np.random.Generator) -> HierAction:
        types = np.flatnonzero(mask.high)
        b0 = int(types[rng.integers(len(types))])
        g = at.GROUPS[b0]
        slots = g.start + np.flatnonzero(mask.low[g])
        b1 = int(slots[rng.integers(len(slots))])
        return HierAction(at.ActionType(b0), LowAction(b1))
