"""Episode rollouts, yield/cost metrics and scenario x seed sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .action_tree import InvalidActionError
from .field_env import FieldEnv, RewardParams, trajectory_record, write_jsonl
from .noise import FlipNoise, GaussianNoise, NoNoise, NoiseModel
from .scenario import ScenarioConfig, battery_budget

log = logging.getLogger(__name__)

SQFT_PER_ACRE = 43560.0
# the evaluated field is 100 x 100 square feet
FIELD_AREA_ACRES = 100.0 * 100.0 / SQFT_PER_ACRE

CSV_COLUMNS = ("policy", "scenario_id", "seed", "yield_pct", "yield_dollars", "pesticide_cost",
               "steps_used", "sprays", "infected_total")


class PolicyContractError(RuntimeError):
    pass


@dataclass
class EpisodeTrajectory:
    policy: str
    scenario_id: str
    seed: int
    budget: int
    initial_health: np.ndarray
    steps: list = field(default_factory=list)
    infected_total: int = 0
    infected_sprayed: int = 0
    healthy_sprayed: int = 0
    steps_used: int = 0
    total_reward: float = 0.0
    recovered_by_level: dict = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})

    @property
    def sprays(self) -> int:
        return self.infected_sprayed + self.healthy_sprayed

    def records(self) -> list[dict]:
        return list(self.steps)


def _policy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))


def run_episode(policy, scenario: ScenarioConfig, seed: int,
                reward_params: Optional[RewardParams] = None) -> EpisodeTrajectory:
    """Roll ``policy`` out until the episode ends. Deterministic in (policy, scenario, seed)."""
    env = FieldEnv(scenario, reward_params)
    state, _ = env.reset(seed)
    rng = _policy_rng(seed)
    traj = EpisodeTrajectory(getattr(policy, "name", type(policy).__name__), scenario.scenario_id,
                             int(seed), state.budget, env.initial_health.copy())
    interior = env.initial_health[1:-1, 1:-1]
    traj.infected_total = int(np.count_nonzero(interior > 0))
    while not env.state.done:
        action, hint = policy.act(env, rng)
        pos = env.state.position
        try:
            out = env.step(action, hint)
        except InvalidActionError as exc:
            raise PolicyContractError(f"{traj.policy} chose {action} at {pos} "
                                      f"(scenario {traj.scenario_id}, seed {seed}, step {len(traj.steps)}): {exc}") from exc
        traj.total_reward += out.reward
        traj.steps.append(trajectory_record(len(traj.steps), env.state.position, action, out.info,
                                            env.state.battery_remaining))
    s = env.state
    sprayed_inf = s.sprayed & (s.health > 0)
    traj.infected_sprayed = int(np.count_nonzero(sprayed_inf))
    traj.healthy_sprayed = int(np.count_nonzero(s.sprayed & (s.health == 0)))
    traj.steps_used = s.steps_used
    for level in (1, 2, 3):
        traj.recovered_by_level[level] = int(np.count_nonzero(sprayed_inf & (s.health == level)))
    return traj


# ---------------------------------------------------------------- metrics

def yield_recovered_pct(traj: EpisodeTrajectory) -> Optional[float]:
    """Share of initially infected cells that were sprayed; ``None`` when nothing was infected."""
    if traj.infected_total == 0:
        return None
    return 100.0 * traj.infected_sprayed / traj.infected_total


def yield_recovered_dollars(traj: EpisodeTrajectory, params: RewardParams,
                            field_area_acres: Optional[float] = None) -> float:
    """Sum of attainable yield value over recovered cells; per acre when an area is given."""
    total = sum(n * params.eta(level) * params.uay * params.ppb
                for level, n in sorted(traj.recovered_by_level.items()))
    if field_area_acres is not None:
        if field_area_acres <= 0:
            raise ValueError("field_area_acres must be > 0")
        total /= field_area_acres
    return total


def pesticide_cost_per_acre(traj: EpisodeTrajectory, params: RewardParams,
                            field_area_acres: float = FIELD_AREA_ACRES) -> float:
    if field_area_acres <= 0:
        raise ValueError("field_area_acres must be > 0")
    return traj.sprays * params.upp / field_area_acres


# ---------------------------------------------------------------- sweeps

@dataclass
class MetricsRow:
    policy: str
    scenario_id: str
    seed: int
    yield_pct: Optional[float]
    yield_dollars: float
    pesticide_cost: float
    steps_used: int
    sprays: int
    infected_total: int
    error: Optional[str] = None
    extra: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    rows: list

    def aggregate(self) -> list[dict]:
        """Mean and std (population) over seeds per (policy, scenario, extra labels)."""
        groups: dict = {}
        for r in self.rows:
            key = (r.policy, r.scenario_id) + tuple(sorted(r.extra.items()))
            groups.setdefault(key, []).append(r)
        out = []
        for key, rows in groups.items():
            ok = [r for r in rows if r.error is None]
            entry = {"policy": key[0], "scenario_id": key[1], **dict(key[2:]),
                     "n": len(ok), "failures": len(rows) - len(ok)}
            for metric in ("yield_pct", "yield_dollars", "pesticide_cost"):
                vals = [getattr(r, metric) for r in ok if getattr(r, metric) is not None]
                entry[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
                entry[f"{metric}_std"] = float(np.std(vals)) if vals else None
            out.append(entry)
        return out

    def mean(self, policy: str, metric: str, **labels) -> float:
        vals = [getattr(r, metric) for r in self.rows
                if r.policy == policy and r.error is None and getattr(r, metric) is not None
                and all(r.extra.get(k) == v for k, v in labels.items())]
        if not vals:
            raise KeyError(f"no rows for policy={policy!r} labels={labels}")
        return float(np.mean(vals))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        extra_keys = sorted({k for r in self.rows for k in r.extra})
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(CSV_COLUMNS) + extra_keys)
        for r in self.rows:
            d = asdict(r)
            writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS] + [_fmt(r.extra.get(k)) for k in extra_keys])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_json(self, path=None) -> str:
        text = json.dumps({"rows": [asdict(r) for r in self.rows], "aggregate": self.aggregate()},
                          indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_row(traj: EpisodeTrajectory, params: RewardParams, field_area_acres: float) -> MetricsRow:
    return MetricsRow(traj.policy, traj.scenario_id, traj.seed, yield_recovered_pct(traj),
                      yield_recovered_dollars(traj, params), pesticide_cost_per_acre(traj, params, field_area_acres),
                      traj.steps_used, traj.sprays, traj.infected_total)


def _run_cell(args):
    name, policy, scenario, seed, params, area, extra = args
    try:
        traj = run_episode(policy, scenario, seed, params)
        row = metrics_row(traj, params, area)
        row.policy = name
    except Exception as exc:  # one failing cell must not sink the sweep
        log.warning("sweep cell %s/%s/%s failed: %s", name, scenario.scenario_id, seed, exc)
        row = MetricsRow(name, scenario.scenario_id, int(seed), None, 0.0, 0.0, 0, 0, 0,
                         error=f"{type(exc).__name__}: {exc}")
    row.extra = dict(extra)
    return row


def _seed_list(seeds) -> list[int]:
    return list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]


def sweep(policies: Mapping[str, object], scenarios: Sequence[ScenarioConfig], seeds=5,
          reward_params: Optional[RewardParams] = None, field_area_acres: float = FIELD_AREA_ACRES,
          workers: int = 1, extra: Optional[dict] = None) -> MetricsReport:
    """Evaluate every (policy, scenario, seed) combination.

    Rows come back in (policy, scenario, seed) order whatever ``workers`` is.
    """
    params = reward_params or RewardParams()
    jobs = [(name, pol, sc, seed, params, field_area_acres, extra or {})
            for name, pol in policies.items() for sc in scenarios for seed in _seed_list(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    return MetricsReport(rows)


def noise_label(noise: NoiseModel) -> tuple[str, float]:
    if isinstance(noise, GaussianNoise):
        return "gaussian", noise.sigma
    if isinstance(noise, FlipNoise):
        return "flip", noise.p
    return "none", 0.0


def noise_sweep(policies: Mapping[str, object], scenario: ScenarioConfig,
                noise_values: Iterable[float] = (0.05, 0.2, 0.5, 0.7),
                families: Iterable[str] = ("gaussian", "flip"), seeds=5, include_reference: bool = True,
                reward_params: Optional[RewardParams] = None, field_area_acres: float = FIELD_AREA_ACRES,
                workers: int = 1) -> MetricsReport:
    """Evaluate fixed policies under each observation-noise setting.

    Rows carry ``noise`` (family) and ``noise_level`` labels; the noiseless
    reference uses family ``"none"``.
    """
    settings: list[NoiseModel] = [NoNoise()] if include_reference else []
    for fam in families:
        for v in noise_values:
            settings.append(GaussianNoise(v) if fam == "gaussian" else FlipNoise(v))
    rows = []
    for noise in settings:
        fam, level = noise_label(noise)
        sc = replace(scenario, noise=noise)
        rows.extend(sweep(policies, [sc], seeds, reward_params, field_area_acres, workers,
                          extra={"noise": fam, "noise_level": level}).rows)
    return MetricsReport(rows)


def extent_sweep(policies: Mapping[str, object], base: ScenarioConfig,
                 ranges: Sequence[tuple[tuple[float, float], Optional[int]]], seeds=5,
                 reward_params: Optional[RewardParams] = None, field_area_acres: float = FIELD_AREA_ACRES,
                 workers: int = 1) -> MetricsReport:
    """Evaluate across infection extents; each entry is ``((lo, hi), budget or None)``."""
    rows = []
    for (lo, hi), budget in ranges:
        sc = replace(base, infection_range=(lo, hi), budget=budget, name=None)
        label = f"{round(lo * 100)}-{round(hi * 100)}"
        rows.extend(sweep(policies, [sc], seeds, reward_params, field_area_acres, workers,
                          extra={"extent": label, "budget": battery_budget(sc)}).rows)
    return MetricsReport(rows)


def plot_data(report: MetricsReport, x: str, metric: str = "yield_pct", series: Sequence[str] = ("policy",)):
    """``(x, y, series)`` triples of per-group means, sorted by series then x."""
    groups: dict = {}
    for r in report.rows:
        if r.error is not None or getattr(r, metric) is None:
            continue
        d = {"policy": r.policy, "scenario_id": r.scenario_id, **r.extra}
        key = ("/".join(str(d[s]) for s in series), d[x])
        groups.setdefault(key, []).append(getattr(r, metric))
    triples = [(xv, float(np.mean(v)), s) for (s, xv), v in groups.items()]
    return sorted(triples, key=lambda t: (t[2], t[0]))


def write_plot_data(triples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "series"])
        for t in triples:
            w.writerow([_fmt(t[0]), _fmt(t[1]), t[2]])


def export_trajectory(traj: EpisodeTrajectory, path) -> None:
    write_jsonl(traj.records(), path)
