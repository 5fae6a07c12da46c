"""Command line entry point: train, sweep, eval and oracle subcommands.

Exit codes: 0 success, 2 configuration or usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import harness
from . import rng as rngmod
from .agents import AgentConfig, MODES, QParameters, make_policy, run_agent
from .harness import ConfigError, SweepConfig
from .oracle import ORACLE_MODES, oracle_optimal

POLICY_FORMAT = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="master seed (overrides the config seed list)")
    common.add_argument("--algo", choices=MODES + ("reference",))
    common.add_argument("--rho", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--eta", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--episodes", type=int)

    p = _Parser(prog="robustrl", description="Policy-regularized robust RL experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="single training run, prints a summary")
    sub.add_parser("sweep", parents=[common], help="full grid x seeds sweep to CSV")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a serialized policy on the target grid")
    ev.add_argument("--policy", required=True, help="policy JSON written by 'train --out'")
    sub.add_parser("oracle", parents=[common], help="print optimal regularized robust V and Q tables")
    return p


def _config(args) -> SweepConfig:
    cfg = harness.load_config(args.config) if args.config else SweepConfig().validate()
    if args.algo is not None:
        cfg.algorithms = [args.algo]
    if args.rho is not None:
        cfg.rhos = [args.rho]
    if args.sigma is not None:
        cfg.sigmas = [args.sigma]
    if args.eta is not None:
        cfg.eta = args.eta
    if args.beta is not None:
        cfg.beta = args.beta
    if args.episodes is not None:
        cfg.episodes = args.episodes
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.output = args.out
    return cfg.validate()


def _single_cell(cfg: SweepConfig) -> harness.Cell:
    cells = harness.sweep_cells(cfg)
    if len(cells) != 1:
        raise ConfigError("train/eval need exactly one algorithm and one rho/sigma; use --algo/--rho/--sigma")
    return cells[0]


def _agent_config(cfg, cell, seed) -> AgentConfig:
    try:
        return harness.agent_config(cfg, cell, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(cfg: SweepConfig, out) -> int:
    cell = _single_cell(cfg)
    if cell.algorithm == "reference":
        raise ConfigError("the reference policy is not trained")
    seed = cfg.seeds[0]
    acfg = _agent_config(cfg, cell, seed)
    env = harness.make_env(cfg)
    policy, log = run_agent(env, acfg)
    final = log.params_after(env, log.episodes)
    print(f"algorithm {cell.algorithm}")
    print(f"level {cell.level!r}")
    print(f"seed {seed}")
    print(f"episodes {log.episodes}")
    print(f"beta {log.beta!r}")
    print(f"final_value {float(log.values[-1])!r}")
    print(f"mean_bonus {log.mean_bonus()!r}")
    print(f"mean_train_return {float(log.rewards.sum(axis=1).mean())!r}")
    if out:
        doc = {"format": POLICY_FORMAT, "env": cfg.env, "env_params": cfg.env_params,
               "reference": cfg.reference, "algorithm": cell.algorithm, "level": cell.level,
               "eta": cfg.eta, "seed": seed, "params": final.to_dict()}
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"policy written to {out}")
    return 0


def load_policy(path, cfg: SweepConfig):
    """Rebuild a trained policy; the environment and reference come from the file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy {path}: {exc}") from exc
    if doc.get("format") != POLICY_FORMAT:
        raise ConfigError(f"unsupported policy format in {path}")
    pcfg = replace(cfg, env=doc["env"], env_params=doc["env_params"], reference=doc["reference"],
                   eta=doc["eta"], algorithms=[doc["algorithm"]])
    cell = harness.Cell(doc["algorithm"], float(doc["level"]))
    acfg = _agent_config(pcfg, cell, int(doc["seed"]))
    env = harness.make_env(pcfg)
    params = QParameters.from_dict(env, doc["params"])
    if params.nu.shape != (env.H, env.d):
        raise ConfigError("policy parameters do not match the environment")
    return pcfg, make_policy(params, acfg, env)


def cmd_eval(cfg: SweepConfig, policy_path: str) -> int:
    pcfg, policy = load_policy(policy_path, cfg)
    seed = cfg.seeds[0]
    print("perturbation,mean,se")
    for j, pert in enumerate(pcfg.perturbations):
        env = harness.make_env(pcfg, pert)
        mean, se = harness.evaluate_policy(policy, env, pcfg.eval_rollouts,
                                           rngmod.stream(seed, 0, "eval_policy", j),
                                           rngmod.stream(seed, 0, "eval_env", j))
        print(f"{pert!r},{mean!r},{se!r}")
    return 0


def cmd_oracle(cfg: SweepConfig) -> int:
    algo = cfg.algorithms[0] if len(cfg.algorithms) == 1 else "drmdp"
    mode = "rrmdp" if algo == "rrmdp" else "drmdp"
    if mode not in ORACLE_MODES:
        raise ConfigError(f"no oracle for {algo}")
    level = cfg.sigmas[0] if mode == "rrmdp" else cfg.rhos[0]
    env = harness.make_env(cfg)
    if not getattr(env, "tabular", False):
        raise ConfigError(f"env {cfg.env!r} is not tabular; no oracle available")
    res = oracle_optimal(env, mode, level, cfg.eta, harness.make_reference(cfg))
    np.set_printoptions(precision=10, suppress=True, linewidth=200)
    print(f"mode {mode} level {level!r} eta {cfg.eta!r}")
    for h in range(1, env.H + 1):
        print(f"h={h} V {np.array2string(res.V[h - 1])}")
    for h in range(1, env.H + 1):
        print(f"h={h} Q")
        print(np.array2string(res.Q[h - 1]))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "sweep":
            path = harness.run_sweep(cfg)
            print(f"wrote {path}")
            return 0
        if args.command == "eval":
            return cmd_eval(cfg, args.policy)
        return cmd_oracle(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
