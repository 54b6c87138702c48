"""YAML run configuration with strict key checking and dotted overrides.

Schema (every section optional; omitted keys take the defaults)::

    scenario:        # base scenario
      dims: [10, 10]
      infection_range: [0.2, 0.3]
      randomness: low            # low | high
      initiation: corners        # corners | center
      distribution: categorical  # categorical | 1 | 2 | 3
      noise: {kind: gaussian, sigma: 0.15}   # or {kind: flip, p: ...} / {kind: none}
      budget: null               # null = automatic budget
      movement_buffer: null
      scatter: null
      spray_charges: null        # null = unlimited
      start: bottom-left
      map_file: null             # text grid; bypasses the generator
      name: null
    scenarios:       # optional list; each entry is merged over `scenario`
      - {initiation: center}
    reward: {uay: 10, ppb: 1, upp: 0.05, kappa_rev: 5, t50: 0, t_inf: [0, 0.5, 1], p_inf: [0.33, 0.66, 1.0]}
    ppo:  {learning_rate: 3.0e-4, rollout_length: 2048, ...}   # TrainConfig fields
    eval: {seeds: 5, ...}                                      # EvalConfig fields
"""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .field_env import RewardParams
from .noise import noise_from_dict, noise_to_dict
from .ppo import TrainConfig
from .scenario import InfectionMap, ScenarioConfig, ScenarioError

CONFIG_DIR_ENV = "HAMPPO_CONFIG_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    seeds: int = 5
    deterministic: bool = False
    field_area_acres: float = 100.0 * 100.0 / 43560.0
    reactive_flip_p: float = 0.15
    spray_threshold: float = 0.5
    noise_values: tuple = (0.05, 0.2, 0.5, 0.7)
    noise_families: tuple = ("gaussian", "flip")
    extent_ranges: tuple = ((0.05, 0.1), (0.2, 0.3), (0.3, 0.4), (0.4, 0.6), (0.8, 0.97))
    extent_budgets: tuple = (None, 230, 290, 350, 520)

    def __post_init__(self):
        self.noise_values = tuple(float(v) for v in self.noise_values)
        self.noise_families = tuple(self.noise_families)
        self.extent_ranges = tuple(tuple(float(x) for x in r) for r in self.extent_ranges)
        self.extent_budgets = tuple(None if b is None else int(b) for b in self.extent_budgets)
        if self.seeds < 1:
            raise ValueError(f"seeds={self.seeds} out of range: must be >= 1")
        if self.field_area_acres <= 0:
            raise ValueError(f"field_area_acres={self.field_area_acres} out of range: must be > 0")
        if not 0.0 <= self.reactive_flip_p <= 1.0:
            raise ValueError(f"reactive_flip_p={self.reactive_flip_p} out of range: must lie in [0, 1]")
        if not 0.0 <= self.spray_threshold <= 1.0:
            raise ValueError(f"spray_threshold={self.spray_threshold} out of range: must lie in [0, 1]")
        if any(f not in ("gaussian", "flip") for f in self.noise_families):
            raise ValueError(f"noise_families={self.noise_families} out of range: gaussian | flip")
        if len(self.extent_ranges) != len(self.extent_budgets):
            raise ValueError("extent_ranges and extent_budgets must have the same length")


SCENARIO_KEYS = ("dims", "infection_range", "randomness", "initiation", "distribution", "noise", "budget",
                 "movement_buffer", "scatter", "spray_charges", "start", "map_file", "name")

DEFAULTS = {
    "scenario": {
        "dims": [10, 10], "infection_range": [0.2, 0.3], "randomness": "low", "initiation": "corners",
        "distribution": "categorical", "noise": {"kind": "gaussian", "sigma": 0.15}, "budget": None,
        "movement_buffer": None, "scatter": None, "spray_charges": None, "start": "bottom-left",
        "map_file": None, "name": None,
    },
    "scenarios": None,
    "reward": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(RewardParams()).items()},
    "ppo": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(TrainConfig()).items()},
    "eval": {k: ([list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v)
             for k, v in asdict(EvalConfig()).items()},
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    scenarios: list
    reward: RewardParams
    ppo: TrainConfig
    eval: EvalConfig
    resolved: dict = field(default_factory=dict)

    def snapshot(self) -> str:
        return yaml.safe_dump(self.resolved, sort_keys=True)

    def write_snapshot(self, out_dir) -> Path:
        path = Path(out_dir) / "resolved_config.yaml"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.snapshot())
        return path


def resolve_path(path) -> Path:
    """Relative config paths that do not exist are looked up in ``$HAMPPO_CONFIG_DIR``."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(CONFIG_DIR_ENV):
        alt = Path(os.environ[CONFIG_DIR_ENV]) / p
        if alt.exists():
            return alt
    return p


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"malformed override {text!r}: expected dotted.key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"malformed override {text!r}: empty key segment")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed override {text!r}: {exc}") from None
    return parts, value


def load_config(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        p = resolve_path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = p.parent
    else:
        base_dir = Path.cwd()
    for ov in overrides:
        keys, value = parse_override(ov)
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {ov!r}: {k!r} is not a section")
        node[keys[-1]] = value
    return build_config(raw, base_dir)


def build_config(raw: dict, base_dir=None) -> RunConfig:
    errors = []
    unknown = sorted(set(raw) - set(DEFAULTS))
    errors += [f"unknown section {k!r}" for k in unknown]
    merged = copy.deepcopy(DEFAULTS)
    for section in ("scenario", "reward", "ppo", "eval"):
        given = raw.get(section) or {}
        if not isinstance(given, dict):
            errors.append(f"section {section!r} must be a mapping")
            continue
        for k, v in given.items():
            if k not in merged[section]:
                errors.append(f"unknown key {section}.{k}")
                continue
            err = _type_error(merged[section][k], v, f"{section}.{k}", section)
            if err:
                errors.append(err)
            else:
                merged[section][k] = v
    scen_list = raw.get("scenarios")
    if scen_list is not None:
        if not isinstance(scen_list, list):
            errors.append("'scenarios' must be a list of mappings")
            scen_list = None
        else:
            resolved_list = []
            for n, entry in enumerate(scen_list):
                if not isinstance(entry, dict):
                    errors.append(f"scenarios[{n}] must be a mapping")
                    continue
                item = copy.deepcopy(merged["scenario"])
                for k, v in entry.items():
                    if k not in item:
                        errors.append(f"unknown key scenarios[{n}].{k}")
                        continue
                    err = _type_error(DEFAULTS["scenario"][k], v, f"scenarios[{n}].{k}", "scenario")
                    if err:
                        errors.append(err)
                    else:
                        item[k] = v
                resolved_list.append(item)
            merged["scenarios"] = resolved_list
    if errors:
        raise ConfigError("; ".join(errors))

    base_dir = Path(base_dir or Path.cwd())
    try:
        scenario = _scenario(merged["scenario"], base_dir, "scenario")
        scenarios = ([_scenario(s, base_dir, f"scenarios[{n}]") for n, s in enumerate(merged["scenarios"])]
                     if merged["scenarios"] is not None else [scenario])
    except (ScenarioError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    reward = _construct(RewardParams, merged["reward"], "reward")
    ppo = _construct(TrainConfig, merged["ppo"], "ppo")
    ev = _construct(EvalConfig, merged["eval"], "eval")
    return RunConfig(scenario, scenarios, reward, ppo, ev, merged)


def _construct(cls, values: dict, section: str):
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _type_error(default, value, name: str, section: str) -> Optional[str]:
    if section == "scenario":
        return _scenario_type_error(name.rsplit(".", 1)[-1], value, name)
    if value is None:
        return None if default is None else f"{name}: expected {type(default).__name__}, got null"
    if default is None:
        return None
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        return f"{name}: expected {type(default).__name__}, got {type(value).__name__} ({value!r})"
    return None


def _scenario_type_error(key: str, value, name: str) -> Optional[str]:
    def num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    def intish(v):
        return isinstance(v, int) and not isinstance(v, bool)

    checks = {
        "dims": lambda v: isinstance(v, list) and len(v) == 2 and all(intish(x) for x in v),
        "infection_range": lambda v: isinstance(v, list) and len(v) == 2 and all(num(x) for x in v),
        "randomness": lambda v: isinstance(v, str),
        "initiation": lambda v: isinstance(v, str),
        "distribution": lambda v: isinstance(v, str) or intish(v),
        "noise": lambda v: v is None or isinstance(v, dict),
        "budget": lambda v: v is None or intish(v),
        "movement_buffer": lambda v: v is None or intish(v),
        "scatter": lambda v: v is None or num(v),
        "spray_charges": lambda v: v is None or intish(v),
        "start": lambda v: isinstance(v, str),
        "map_file": lambda v: v is None or isinstance(v, str),
        "name": lambda v: v is None or isinstance(v, str),
    }
    if not checks[key](value):
        return f"{name}: invalid type/shape {value!r}"
    return None


def _scenario(d: dict, base_dir: Path, where: str) -> ScenarioConfig:
    d = dict(d)
    map_file = d.pop("map_file", None)
    fixed = None
    if map_file:
        mp = Path(map_file)
        if not mp.is_absolute():
            mp = base_dir / mp
        fixed = InfectionMap.from_text(mp.read_text())
    try:
        noise = noise_from_dict(d.pop("noise"))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.noise: {exc}") from None
    return ScenarioConfig(dims=tuple(d.pop("dims")), infection_range=tuple(d.pop("infection_range")),
                          noise=noise, fixed_map=fixed, **d)


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    return {"dims": list(sc.dims), "infection_range": list(sc.infection_range), "randomness": sc.randomness,
            "initiation": sc.initiation, "distribution": sc.distribution, "noise": noise_to_dict(sc.noise),
            "budget": sc.budget, "movement_buffer": sc.movement_buffer, "scatter": sc.scatter,
            "spray_charges": sc.spray_charges, "start": sc.start, "name": sc.name}
