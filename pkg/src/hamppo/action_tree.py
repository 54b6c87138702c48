"""Conditional action tree with invalid-action masking.

The policy emits two logit vectors: a 2-way type head (scout / deep scout)
and a 6-slot low-level head laid out as ``[up, down, left, right, spray,
no_spray]``. Choosing the type selects which slice of the low-level head is
live; each slice is a separately normalized masked softmax.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MASK_CONSTANT = -1e10


class ActionType(IntEnum):
    SCOUT = 0
    DEEP_SCOUT = 1


class LowAction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    SPRAY = 4
    NO_SPRAY = 5


MOVE_SLOTS = slice(0, 4)
SPRAY_SLOTS = slice(4, 6)
GROUPS = (MOVE_SLOTS, SPRAY_SLOTS)

MOVE_DELTAS = {
    LowAction.UP: (-1, 0),
    LowAction.DOWN: (1, 0),
    LowAction.LEFT: (0, -1),
    LowAction.RIGHT: (0, 1),
}


class InvalidActionError(ValueError):
    """An action outside the currently valid sub-tree."""


@dataclass(frozen=True)
class HierAction:
    b0: ActionType
    b1: LowAction

    def __post_init__(self):
        object.__setattr__(self, "b0", ActionType(self.b0))
        object.__setattr__(self, "b1", LowAction(self.b1))
        is_move = self.b1 <= LowAction.RIGHT
        if is_move != (self.b0 == ActionType.SCOUT):
            raise InvalidActionError(f"{self.b1.name} does not belong under {self.b0.name}")

    @classmethod
    def scout(cls, direction: LowAction) -> "HierAction":
        return cls(ActionType.SCOUT, direction)

    @classmethod
    def deep_scout(cls, spray: bool) -> "HierAction":
        return cls(ActionType.DEEP_SCOUT, LowAction.SPRAY if spray else LowAction.NO_SPRAY)

    @property
    def is_scout(self) -> bool:
        return self.b0 == ActionType.SCOUT

    @property
    def spray(self) -> bool:
        return self.b1 == LowAction.SPRAY

    def __str__(self) -> str:
        return f"{self.b0.name.lower()}:{self.b1.name.lower()}"

    @classmethod
    def parse(cls, text: str) -> "HierAction":
        b0, b1 = text.split(":")
        return cls(ActionType[b0.upper()], LowAction[b1.upper()])


@dataclass(frozen=True)
class ActionMask:
    high: np.ndarray  # (2,) bool
    low: np.ndarray  # (6,) bool

    def allows(self, action: HierAction) -> bool:
        return bool(self.high[action.b0] and self.low[action.b1])

    def valid_actions(self) -> list[HierAction]:
        out = []
        for b0 in ActionType:
            if not self.high[b0]:
                continue
            group = GROUPS[b0]
            for b1 in range(group.start, group.stop):
                if self.low[b1]:
                    out.append(HierAction(b0, LowAction(b1)))
        return out


def is_headland(position: tuple[int, int], shape: tuple[int, int]) -> bool:
    i, j = position
    return i == 0 or j == 0 or i == shape[0] - 1 or j == shape[1] - 1


def compute_masks(position: tuple[int, int], sprayed: np.ndarray) -> ActionMask:
    """Masks for the agent at ``position`` on a field whose full grid (headland
    ring included) has ``sprayed.shape``.

    Up/down follow the crop row; left/right are only available on the headland
    ring. Deep scouting is masked on headland cells and on already-sprayed
    cells.
    """
    rows, cols = sprayed.shape
    i, j = position
    on_headland = is_headland(position, sprayed.shape)
    low = np.zeros(6, dtype=bool)
    low[LowAction.UP] = i > 0
    low[LowAction.DOWN] = i < rows - 1
    low[LowAction.LEFT] = on_headland and j > 0
    low[LowAction.RIGHT] = on_headland and j < cols - 1
    low[SPRAY_SLOTS] = True
    high = np.array([low[MOVE_SLOTS].any(), not on_headland and not sprayed[i, j]])
    return ActionMask(high, low)


def masked_logits(logits, mask, C: float = MASK_CONSTANT) -> np.ndarray:
    return np.where(mask, logits, C)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mask_and_normalize(logits, mask=None, C: float = MASK_CONSTANT) -> np.ndarray:
    """Softmax with invalid entries' logits replaced by ``C``."""
    logits = np.asarray(logits, dtype=np.float64)
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every distribution needs at least one unmasked entry")
    return np.exp(_log_softmax(masked_logits(logits, mask, C)))


def _group_log_probs(type_logits, low_logits, high_mask, low_mask, C):
    """Log-probabilities of the type level and of each low-level slice (batched)."""
    logp0 = _log_softmax(masked_logits(type_logits, high_mask, C))
    logp1 = np.empty_like(low_logits, dtype=np.float64)
    for g in GROUPS:
        logp1[..., g] = _log_softmax(masked_logits(low_logits[..., g], low_mask[..., g], C))
    return logp0, logp1


def _entropy(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    return -(p * logp).sum(axis=-1)


def sample_hierarchical(type_logits, low_logits, mask: ActionMask, rng: np.random.Generator,
                        C: float = MASK_CONSTANT) -> tuple[HierAction, float]:
    """Sample ``b0`` from the masked type head, then ``b1`` from the slice ``b0`` selects."""
    logp0, logp1 = _group_log_probs(np.asarray(type_logits, dtype=np.float64),
                                    np.asarray(low_logits, dtype=np.float64),
                                    mask.high, mask.low, C)
    b0 = _draw(np.exp(logp0), rng)
    g = GROUPS[b0]
    k = _draw(np.exp(logp1[g]), rng)
    b1 = g.start + k
    return HierAction(ActionType(b0), LowAction(b1)), float(logp0[b0] + logp1[b1])


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    k = min(k, len(p) - 1)
    # guard against landing on a zero-probability slot through rounding at the top end
    while p[k] == 0.0 and k > 0:
        k -= 1
    return k


def sample_batch(type_logits, low_logits, high_mask, low_mask, rng: np.random.Generator,
                 C: float = MASK_CONSTANT):
    """Vectorized hierarchical sampling over a leading batch axis.

    Returns ``(b0, b1, log_prob)`` arrays; ``b1`` is the 6-slot index.
    """
    logp0, logp1 = _group_log_probs(type_logits, low_logits, high_mask, low_mask, C)
    n = logp0.shape[0]
    b0 = _inverse_cdf(np.exp(logp0), rng.random(n))
    u = rng.random(n)
    b1 = np.empty(n, dtype=np.int64)
    for t, g in enumerate(GROUPS):
        sel = b0 == t
        if sel.any():
            b1[sel] = g.start + _inverse_cdf(np.exp(logp1[sel][:, g]), u[sel])
    rows = np.arange(n)
    return b0, b1, logp0[rows, b0] + logp1[rows, b1]


def _inverse_cdf(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=1)
    k = (c < (u * c[:, -1])[:, None]).sum(axis=1)
    k = np.minimum(k, p.shape[1] - 1)
    # step back off zero-probability slots hit through rounding
    bad = p[np.arange(len(k)), k] == 0.0
    while bad.any():
        k[bad] -= 1
        bad = p[np.arange(len(k)), k] == 0.0
    return k


def log_prob_and_entropy(type_logits, low_logits, mask: ActionMask, action: HierAction,
                         C: float = MASK_CONSTANT) -> tuple[float, float]:
    """log pi(a|s) = log P(b0 | h0) + log P(b1 | h1, b0); entropy by the chain rule."""
    if not mask.allows(action):
        raise InvalidActionError(f"{action} is masked")
    lp, ent, _ = batch_log_prob_entropy(np.asarray(type_logits, dtype=np.float64)[None],
                                        np.asarray(low_logits, dtype=np.float64)[None],
                                        mask.high[None], mask.low[None],
                                        np.array([int(action.b0)]), np.array([int(action.b1)]), C)
    return float(lp[0]), float(ent[0])


def batch_log_prob_entropy(type_logits, low_logits, high_mask, low_mask, b0, b1,
                           C: float = MASK_CONSTANT):
    """Batched log-probabilities and entropies plus a cache for :func:`batch_backward`.

    Entropy is ``H(type) + sum_t P(t) H(low | t)``, the exact entropy of the
    joint (b0, b1) distribution.
    """
    logp0, logp1 = _group_log_probs(type_logits, low_logits, high_mask, low_mask, C)
    rows = np.arange(logp0.shape[0])
    log_prob = logp0[rows, b0] + logp1[rows, b1]
    h0 = _entropy(logp0)
    h_sub = np.stack([_entropy(logp1[:, g]) for g in GROUPS], axis=1)
    p0 = np.exp(logp0)
    entropy = h0 + (p0 * h_sub).sum(axis=1)
    cache = (logp0, logp1, h0, h_sub, entropy, b0, b1, high_mask, low_mask)
    return log_prob, entropy, cache


def batch_backward(cache, d_log_prob, d_entropy):
    """Gradients with respect to the raw type and low-level logits.

    Masked logits are replaced by a constant before the softmax, so their
    gradient is exactly zero.
    """
    logp0, logp1, h0, h_sub, entropy, b0, b1, high_mask, low_mask = cache
    n = logp0.shape[0]
    rows = np.arange(n)
    p0 = np.exp(logp0)
    p1 = np.exp(logp1)
    d_log_prob = np.asarray(d_log_prob, dtype=np.float64)
    d_entropy = np.asarray(d_entropy, dtype=np.float64)

    # log-prob part
    g0 = -p0 * d_log_prob[:, None]
    g0[rows, b0] += d_log_prob
    g1 = np.zeros_like(p1)
    for t, g in enumerate(GROUPS):
        sel = b0 == t
        g1[sel, g] = -p1[sel, g]
    g1[rows, b1] += 1.0
    g1 *= d_log_prob[:, None]

    # entropy part: dH/dz_i = -p_i (log p_i + H) for a softmax entropy
    plogp0 = np.where(p0 > 0, p0 * logp0, 0.0)
    mixed = (p0 * h_sub).sum(axis=1)
    d_h0 = -(plogp0 + p0 * h0[:, None])
    d_mix = p0 * (h_sub - mixed[:, None])
    g0 += d_entropy[:, None] * (d_h0 + d_mix)
    for t, g in enumerate(GROUPS):
        q = p1[:, g]
        qlogq = np.where(q > 0, q * logp1[:, g], 0.0)
        d_sub = -(qlogq + q * h_sub[:, t][:, None])
        g1[:, g] += (d_entropy * p0[:, t])[:, None] * d_sub

    g0 = np.where(high_mask, g0, 0.0)
    g1 = np.where(low_mask, g1, 0.0)
    return g0, g1


def spray_probability(type_logits, low_logits, mask: ActionMask, C: float = MASK_CONSTANT) -> float:
    """P(deep scout) * P(spray | deep scout) under the masked policy."""
    logp0, logp1 = _group_log_probs(np.asarray(type_logits, dtype=np.float64),
                                    np.asarray(low_logits, dtype=np.float64),
                                    mask.high, mask.low, C)
    return float(np.exp(logp0[ActionType.DEEP_SCOUT] + logp1[LowAction.SPRAY]))
