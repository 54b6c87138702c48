"""``hamppo`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from .baselines import LawnmowerCarpet, LawnmowerOptimalSpray, LawnmowerReactive, RandomPolicy
from .config import ConfigError, RunConfig, load_config, parse_override
from .field_env import encoding_size
from .network import ArchitectureError, load_checkpoint
from .ppo import NetworkPolicy, fine_tune, train
from .scenario import ScenarioError, generate

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

POLICY_NAMES = ("ham-ppo", "carpet", "reactive", "lawnmower-optimal", "random")
NEEDS_CHECKPOINT = {"ham-ppo", "lawnmower-optimal"}

log = logging.getLogger("hamppo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version_text() -> str:
    return f"hamppo {__version__} (python {platform.python_version()}, numpy {np.__version__})"


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kwargs):
        super().__init__(option_strings, dest, nargs=0, help="print build metadata and exit")

    def __call__(self, parser, namespace, values, option_string=None):
        print(_version_text())
        parser.exit(0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hamppo", description="Hierarchical masked PPO for robotic field spraying.")
    p.add_argument("--version", action=_VersionAction)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, out_help, seed_help="random seed"):
        sp.add_argument("--config", help="YAML config file (relative paths also searched in $HAMPPO_CONFIG_DIR)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, e.g. ppo.epsilon=0.1 (repeatable)")
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging verbosity")

    def eval_flags(sp, policies_default="ham-ppo,carpet,reactive,random"):
        sp.add_argument("--policies", default=policies_default,
                        help=f"comma-separated policy names from {', '.join(POLICY_NAMES)}")
        sp.add_argument("--checkpoint", help="trained checkpoint (.npz), needed by ham-ppo and lawnmower-optimal")
        sp.add_argument("--seeds", type=int, default=None, help="number of evaluation seeds (default eval.seeds)")
        sp.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
        sp.add_argument("--deterministic", action="store_true", help="greedy HAM-PPO actions")

    s = sub.add_parser("gen-scenario", help="generate an infection map in text grid format")
    common(s, "output map file", "generator seed")

    s = sub.add_parser("train", help="train a policy from scratch")
    common(s, "output directory for checkpoints and the training log", "training seed (default ppo.seed)")
    s.add_argument("--steps", type=int, default=None, help="total environment steps (default ppo.total_steps)")

    s = sub.add_parser("fine-tune", help="continue training a checkpoint on the configured scenarios")
    common(s, "output directory for checkpoints and the training log", "training seed (default ppo.seed)")
    s.add_argument("--checkpoint", required=True, help="checkpoint to start from")
    s.add_argument("--steps", type=int, default=None, help="additional environment steps")

    s = sub.add_parser("eval", help="evaluate policies on the configured scenario(s)")
    common(s, "output directory for metrics", "first evaluation seed")
    eval_flags(s)

    s = sub.add_parser("sweep", help="evaluate policies over a scenario list")
    common(s, "output directory for metrics", "first evaluation seed")
    s.add_argument("--scenarios", help="YAML file whose 'scenarios' list is swept (defaults to --config)")
    eval_flags(s)

    s = sub.add_parser("noise-sweep", help="evaluate policies across observation-noise levels")
    common(s, "output directory for metrics and plot data", "first evaluation seed")
    eval_flags(s)

    s = sub.add_parser("extent-sweep", help="evaluate policies across infection extents")
    common(s, "output directory for metrics and plot data", "first evaluation seed")
    eval_flags(s, "ham-ppo,carpet,lawnmower-optimal")

    s = sub.add_parser("export-traj", help="record one episode as line-delimited JSON")
    common(s, "output .jsonl file", "episode seed")
    s.add_argument("--policy", default="ham-ppo", help=f"one of {', '.join(POLICY_NAMES)}")
    s.add_argument("--checkpoint", help="trained checkpoint for network policies")
    s.add_argument("--deterministic", action="store_true", help="greedy HAM-PPO actions")
    return p


# ---------------------------------------------------------------- helpers

def _load(args) -> RunConfig:
    for ov in args.overrides:
        parse_override(ov)  # reject malformed tokens before touching files
    return load_config(args.config, args.overrides)


def _policies(names: str, args, cfg: RunConfig) -> dict:
    chosen = [n.strip() for n in names.split(",") if n.strip()]
    unknown = [n for n in chosen if n not in POLICY_NAMES]
    if unknown or not chosen:
        raise UsageError(f"unknown policy {unknown[0]!r}" if unknown else "no policies given")
    params = None
    if NEEDS_CHECKPOINT & set(chosen):
        params = _checkpoint_params(args.checkpoint, cfg)
    out = {}
    det = getattr(args, "deterministic", False) or cfg.eval.deterministic
    for n in chosen:
        if n == "ham-ppo":
            out[n] = NetworkPolicy(params, deterministic=det, mask_constant=cfg.ppo.mask_constant)
        elif n == "lawnmower-optimal":
            out[n] = LawnmowerOptimalSpray(params, cfg.eval.spray_threshold)
        elif n == "carpet":
            out[n] = LawnmowerCarpet()
        elif n == "reactive":
            out[n] = LawnmowerReactive(cfg.eval.reactive_flip_p)
        else:
            out[n] = RandomPolicy()
    return out


def _checkpoint_params(path, cfg: RunConfig) -> dict:
    if not path:
        raise ConfigError("--checkpoint is required for network policies")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    dims = {s.dims for s in cfg.scenarios} | {cfg.scenario.dims}
    for d in dims:
        if ckpt["architecture"]["input_dim"] != encoding_size(d):
            raise ArchitectureError(f"checkpoint expects {ckpt['architecture']['input_dim']} features, "
                                    f"a {d[0]}x{d[1]} field produces {encoding_size(d)}")
    return ckpt["params"]


def _seeds(args, cfg: RunConfig) -> list[int]:
    n = args.seeds if args.seeds is not None else cfg.eval.seeds
    if n < 1:
        raise UsageError("--seeds must be >= 1")
    start = args.seed if args.seed is not None else 0
    return list(range(start, start + n))


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_report(report: ev.MetricsReport, out: Path) -> None:
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    for row in report.aggregate():
        log.info("%s", row)


# ---------------------------------------------------------------- commands

def cmd_gen_scenario(args, cfg: RunConfig) -> None:
    seed = args.seed if args.seed is not None else 0
    grid = generate(cfg.scenario, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(grid.to_text())
    cfg.resolved["run"] = {"command": "gen-scenario", "seed": seed}
    (out.parent / f"{out.name}.config.yaml").write_text(cfg.snapshot())


def _train_common(args, cfg: RunConfig):
    overrides = {}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        tc = replace(cfg.ppo, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.resolved["ppo"].update(overrides)
    return tc


def cmd_train(args, cfg: RunConfig) -> None:
    tc = _train_common(args, cfg)
    out = _out_dir(args.out)
    cfg.resolved["run"] = {"command": "train"}
    cfg.write_snapshot(out)
    train(cfg.scenarios, tc, cfg.reward, log_path=out / "train_log.jsonl", checkpoint_dir=out,
          on_update=_progress)


def cmd_fine_tune(args, cfg: RunConfig) -> None:
    tc = _train_common(args, cfg)
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    out = _out_dir(args.out)
    cfg.resolved["run"] = {"command": "fine-tune", "checkpoint": str(args.checkpoint)}
    cfg.write_snapshot(out)
    fine_tune(ckpt, cfg.scenarios, tc, cfg.reward, log_path=out / "train_log.jsonl", checkpoint_dir=out,
              on_update=_progress)


def _progress(record: dict) -> None:
    log.info("update %d  steps %d  mean_reward %s", record["update"], record["steps"], record["mean_reward"])


def cmd_eval(args, cfg: RunConfig, scenarios=None) -> None:
    policies = _policies(args.policies, args, cfg)
    seeds = _seeds(args, cfg)
    out = _out_dir(args.out)
    cfg.resolved["run"] = {"command": args.command, "policies": list(policies), "seeds": seeds}
    cfg.write_snapshot(out)
    report = ev.sweep(policies, scenarios or cfg.scenarios, seeds, cfg.reward, cfg.eval.field_area_acres,
                      args.workers)
    _write_report(report, out)


def cmd_sweep(args, cfg: RunConfig) -> None:
    if args.scenarios:
        sc_cfg = load_config(args.scenarios)
        if sc_cfg.resolved.get("scenarios") is None:
            raise ConfigError(f"{args.scenarios}: no 'scenarios' list")
        cfg.resolved["scenarios"] = sc_cfg.resolved["scenarios"]
        cmd_eval(args, cfg, sc_cfg.scenarios)
    else:
        cmd_eval(args, cfg)


def cmd_noise_sweep(args, cfg: RunConfig) -> None:
    policies = _policies(args.policies, args, cfg)
    seeds = _seeds(args, cfg)
    out = _out_dir(args.out)
    cfg.resolved["run"] = {"command": "noise-sweep", "policies": list(policies), "seeds": seeds}
    cfg.write_snapshot(out)
    report = ev.noise_sweep(policies, cfg.scenario, cfg.eval.noise_values, cfg.eval.noise_families, seeds,
                            reward_params=cfg.reward, field_area_acres=cfg.eval.field_area_acres,
                            workers=args.workers)
    _write_report(report, out)
    for metric in ("yield_pct", "pesticide_cost"):
        ev.write_plot_data(ev.plot_data(report, "noise_level", metric, ("policy", "noise")),
                           out / f"plot_{metric}_vs_noise.csv")


def cmd_extent_sweep(args, cfg: RunConfig) -> None:
    policies = _policies(args.policies, args, cfg)
    seeds = _seeds(args, cfg)
    out = _out_dir(args.out)
    cfg.resolved["run"] = {"command": "extent-sweep", "policies": list(policies), "seeds": seeds}
    cfg.write_snapshot(out)
    ranges = list(zip(cfg.eval.extent_ranges, cfg.eval.extent_budgets))
    report = ev.extent_sweep(policies, cfg.scenario, ranges, seeds, cfg.reward, cfg.eval.field_area_acres,
                             args.workers)
    _write_report(report, out)
    for metric in ("yield_pct", "pesticide_cost"):
        ev.write_plot_data(ev.plot_data(report, "extent", metric), out / f"plot_{metric}_vs_extent.csv")


def cmd_export_traj(args, cfg: RunConfig) -> None:
    policy = _policies(args.policy, args, cfg)[args.policy]
    seed = args.seed if args.seed is not None else 0
    traj = ev.run_episode(policy, cfg.scenario, seed, cfg.reward)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.export_trajectory(traj, out)
    cfg.resolved["run"] = {"command": "export-traj", "policy": args.policy, "seed": seed}
    (out.parent / f"{out.name}.config.yaml").write_text(cfg.snapshot())


COMMANDS = {
    "gen-scenario": cmd_gen_scenario,
    "train": cmd_train,
    "fine-tune": cmd_fine_tune,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "noise-sweep": cmd_noise_sweep,
    "extent-sweep": cmd_extent_sweep,
    "export-traj": cmd_export_traj,
}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        cfg = _load(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ScenarioError, ArchitectureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
