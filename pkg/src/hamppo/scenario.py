"""Static infection maps and battery budgets for row-crop field scenarios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np

from .noise import GaussianNoise, NoiseModel


class HealthStatus(IntEnum):
    EMPTY = -1
    HEALTHY = 0
    I1 = 1
    I2 = 2
    I3 = 3


INFECTED_LEVELS = (HealthStatus.I1, HealthStatus.I2, HealthStatus.I3)

# Scatter probability per randomness setting.
SCATTER = {"low": 0.1, "high": 0.5}

START_CORNERS = {"top-left": ("top", "left"), "top-right": ("top", "right"),
                 "bottom-left": ("bottom", "left"), "bottom-right": ("bottom", "right")}

_TO_CHAR = {-1: "e", 0: ".", 1: "1", 2: "2", 3: "3"}
_FROM_CHAR = {v: k for k, v in _TO_CHAR.items()}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class InfectionMap:
    """Interior health grid (no headland). Values are ``HealthStatus`` codes."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.int8)
        if g.ndim != 2:
            raise ScenarioError("infection map must be 2-D")
        if np.any(g < 0) or np.any(g > 3):
            raise ScenarioError("interior cells must be healthy or infected (0..3)")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def infected_count(self) -> int:
        return int(np.count_nonzero(self.grid > 0))

    def to_text(self) -> str:
        return grid_to_text(self.grid)

    @classmethod
    def from_text(cls, text: str) -> "InfectionMap":
        return cls(text_to_grid(text))


def grid_to_text(grid: np.ndarray) -> str:
    return "\n".join("".join(_TO_CHAR[int(v)] for v in row) for row in grid) + "\n"


def text_to_grid(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise ScenarioError("empty grid text")
    if len({len(r) for r in rows}) != 1:
        raise ScenarioError("ragged grid text")
    try:
        return np.array([[_FROM_CHAR[c] for c in r] for r in rows], dtype=np.int8)
    except KeyError as exc:
        raise ScenarioError(f"unknown grid character {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    """One evaluation/training scenario.

    ``distribution`` is ``"categorical"`` (levels uniform over I1..I3) or an
    integer level 1..3 for a fixed-level map. ``budget=None`` means the
    automatic budget rule; ``movement_buffer=None`` means the range-based
    buffer. ``fixed_map`` bypasses the generator entirely. ``start`` names the headland
    corner the robot starts from; the default keeps it away from both
    corner-initiation seeds.
    """

    dims: tuple[int, int] = (10, 10)
    infection_range: tuple[float, float] = (0.2, 0.3)
    randomness: str = "low"
    initiation: str = "corners"
    distribution: Union[str, int] = "categorical"
    noise: NoiseModel = field(default_factory=lambda: GaussianNoise(0.15))
    budget: Optional[int] = None
    movement_buffer: Optional[int] = None
    scatter: Optional[float] = None
    spray_charges: Optional[int] = None
    fixed_map: Optional[InfectionMap] = None
    start: str = "bottom-left"
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "infection_range", tuple(float(x) for x in self.infection_range))
        l, w = self.dims
        if l <= 0 or w <= 0:
            raise ScenarioError(f"dims must be positive, got {self.dims}")
        lo, hi = self.infection_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ScenarioError(f"infection_range must satisfy 0 <= lo <= hi <= 1, got {self.infection_range}")
        if self.randomness not in SCATTER:
            raise ScenarioError(f"randomness must be one of {sorted(SCATTER)}, got {self.randomness!r}")
        if self.initiation not in ("center", "corners"):
            raise ScenarioError(f"initiation must be 'center' or 'corners', got {self.initiation!r}")
        d = self.distribution
        if not (d == "categorical" or (isinstance(d, int) and 1 <= d <= 3)):
            raise ScenarioError(f"distribution must be 'categorical' or a level 1..3, got {d!r}")
        if self.budget is not None and self.budget < 0:
            raise ScenarioError("budget must be >= 0")
        if self.scatter is not None and not 0.0 <= self.scatter <= 1.0:
            raise ScenarioError("scatter must lie in [0, 1]")
        if self.spray_charges is not None and self.spray_charges < 0:
            raise ScenarioError("spray_charges must be >= 0")
        if self.start not in START_CORNERS:
            raise ScenarioError(f"start must be one of {list(START_CORNERS)}, got {self.start!r}")
        if self.fixed_map is not None and self.fixed_map.shape != self.dims:
            raise ScenarioError(f"fixed_map shape {self.fixed_map.shape} does not match dims {self.dims}")

    def start_cell(self) -> tuple[int, int]:
        """Headland corner (full-grid coordinates) where the robot starts."""
        vert, horiz = START_CORNERS[self.start]
        return (0 if vert == "top" else self.dims[0] + 1, 0 if horiz == "left" else self.dims[1] + 1)

    @property
    def scatter_prob(self) -> float:
        return SCATTER[self.randomness] if self.scatter is None else self.scatter

    @property
    def scenario_id(self) -> str:
        if self.name:
            return self.name
        lo, hi = self.infection_range
        dist = "cat" if self.distribution == "categorical" else f"fix{self.distribution}"
        return (f"{self.dims[0]}x{self.dims[1]}_{round(lo * 100)}-{round(hi * 100)}"
                f"_{self.randomness}_{self.initiation}_{dist}")

    def count_bounds(self) -> tuple[int, int]:
        n = self.dims[0] * self.dims[1]
        lo, hi = self.infection_range
        # round() guards against float products such as 0.3 * 10 * 10 = 30.000000000000004
        lo_n = math.ceil(round(lo * n, 9))
        hi_n = math.floor(round(hi * n, 9))
        if lo_n > hi_n:
            raise ScenarioError(f"no integer infected count fits range {self.infection_range} on {self.dims}")
        return lo_n, hi_n


def _seed_cells(l: int, w: int, initiation: str) -> list[tuple[int, int]]:
    if initiation == "center":
        return [(l // 2, w // 2)]
    if l * w == 1:
        return [(0, 0)]
    return [(0, 0), (l - 1, w - 1)]


def generate(config: ScenarioConfig, seed) -> InfectionMap:
    """Grow a static infection map by stochastic frontier expansion.

    Each growth step infects one more cell. With probability ``1 - q`` the
    step prefers the most compact frontier cell (most infected neighbours);
    with probability ``q`` it picks uniformly. Seed clusters take turns at
    random, so two-corner maps grow two comparable patches. Under high randomness the
    uniform pick may also land up to two cells away from the infected set,
    which fragments the pattern. Low randomness never jumps, so the map stays
    4-connected around each seed.
    """
    if config.fixed_map is not None:
        return config.fixed_map
    rng = np.random.default_rng(seed)
    l, w = config.dims
    lo_n, hi_n = config.count_bounds()
    target = int(rng.integers(lo_n, hi_n + 1))
    q = config.scatter_prob
    jumps = config.randomness == "high"

    seeds = _seed_cells(l, w, config.initiation)[:target]
    label = np.zeros((l, w), dtype=np.int8)  # 0 = healthy, k = grown from seed k
    for k, cell in enumerate(seeds, start=1):
        label[cell] = k

    while np.count_nonzero(label) < target:
        k = int(rng.integers(len(seeds))) + 1
        cluster = label == k
        nbr = _neighbor_count(cluster)
        frontier = (nbr > 0) & (label == 0)
        if not frontier.any():
            cluster = label > 0
            nbr = _neighbor_count(cluster)
            frontier = (nbr > 0) & (label == 0)
        if rng.random() < q:
            if jumps:
                candidates = np.argwhere(_dilate(cluster, 2) & (label == 0))
            else:
                candidates = np.argwhere(frontier)
        else:
            counts = np.where(frontier, nbr, 0)
            candidates = np.argwhere(counts == counts.max()) if counts.max() > 0 else np.argwhere(frontier)
        if len(candidates) == 0:
            candidates = np.argwhere(label == 0)
        i, j = candidates[rng.integers(len(candidates))]
        label[i, j] = k

    infected = label > 0
    grid = np.zeros((l, w), dtype=np.int8)
    cells = np.argwhere(infected)
    if config.distribution == "categorical":
        grid[infected] = rng.integers(1, 4, size=len(cells))
    else:
        grid[infected] = int(config.distribution)
    return InfectionMap(grid)


def _neighbor_count(mask: np.ndarray) -> np.ndarray:
    nbr = np.zeros(mask.shape, dtype=np.int8)
    nbr[1:, :] += mask[:-1, :]
    nbr[:-1, :] += mask[1:, :]
    nbr[:, 1:] += mask[:, :-1]
    nbr[:, :-1] += mask[:, 1:]
    return nbr


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    l, w = mask.shape
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            src = mask[max(0, -di):l - max(0, di), max(0, -dj):w - max(0, dj)]
            out[max(0, di):l - max(0, -di), max(0, dj):w - max(0, -dj)] |= src
    return out


def movement_buffer(config: ScenarioConfig) -> int:
    if config.movement_buffer is not None:
        return config.movement_buffer
    hi = config.infection_range[1]
    if hi <= 0.3:
        return 50
    if hi <= 0.4:
        return 60
    return int(round(60 * hi / 0.4))


def battery_budget(config: ScenarioConfig) -> int:
    """Timestep budget: movement allowance plus five steps per expected infection."""
    if config.budget is not None:
        return int(config.budget)
    l, w = config.dims
    lo, hi = config.infection_range
    mean_infected = (lo + hi) / 2 * l * w
    return 50 + 5 + movement_buffer(config) + int(round(5 * mean_infected))
