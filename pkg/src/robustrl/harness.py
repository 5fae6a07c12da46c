"""Configuration, seeded sweeps, target-domain evaluation and CSV output."""

from __future__ import annotations

import concurrent.futures as cf
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .agents import AgentConfig, MODES, reference_policy, run_agent
from .envs import (PutOptionEnv, PutOptionParams, SimulatedEnvParams, build_simulated_env,
                   simulated_actions)
from .oracle import ave_subopt, oracle_optimal
from .policy import ReferencePolicy, sample_from

CSV_HEADER = "run_id,algorithm,env,mode,rho_or_sigma,eta,beta,seed,perturbation,metric,value"
ALGORITHMS = MODES + ("reference",)
ENVS = ("simulated", "put_option")


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


# --------------------------------------------------------------------------
# config file: flat ``section.key = value`` lines, '#' starts a comment


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_grid(text: str) -> list[float]:
    """``0,0.5,1`` or ``start:stop:step`` (inclusive, rounded to 10 decimals)."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return _floats(text)


@dataclass
class SweepConfig:
    env: str = "simulated"
    env_params: dict = field(default_factory=dict)
    algorithms: list[str] = field(default_factory=lambda: ["drmdp", "dr_lsvi_ucb", "lsvi_ucb", "reference"])
    rhos: list[float] = field(default_factory=lambda: [0.3])
    sigmas: list[float] = field(default_factory=lambda: [1.0])
    perturbations: list[float] = field(default_factory=lambda: [0.0, 0.5, 0.9])
    eta: float = 100.0
    lam: float = 1.0
    beta: float | None = None
    episodes: int = 100
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    eval_rollouts: int = 1000
    reference: str = "uniform"
    output: str = "results.csv"
    workers: int = 1

    def validate(self):
        if self.env not in ENVS:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {ENVS}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"unknown or empty algorithm list: {bad or self.algorithms}")
        if any(a in ("drmdp", "dr_lsvi_ucb") for a in self.algorithms) and not self.rhos:
            raise ConfigError("rho grid is empty")
        if "rrmdp" in self.algorithms and not self.sigmas:
            raise ConfigError("sigma grid is empty")
        if any(not 0 <= r <= 1 for r in self.rhos):
            raise ConfigError("rho values must lie in [0, 1]")
        if any(s <= 0 for s in self.sigmas):
            raise ConfigError("sigma values must be positive")
        if not self.perturbations:
            raise ConfigError("perturbation grid is empty")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if self.eval_rollouts < 1:
            raise ConfigError("eval_rollouts must be positive")
        if self.episodes < 1:
            raise ConfigError("episodes must be positive")
        if self.eta <= 0 or self.lam <= 0 or (self.beta is not None and self.beta < 0):
            raise ConfigError("eta and lambda must be positive, beta nonnegative")
        if self.env == "simulated" and any(not 0 <= q <= 1 for q in self.perturbations):
            raise ConfigError("perturbation q must lie in [0, 1]")
        if self.env == "put_option" and any(not 0 < p < 1 for p in self.perturbations):
            raise ConfigError("target price-up probability must lie in (0, 1)")
        make_reference(self)  # raises on an unknown name
        return self


_ENV_KEYS = {
    "simulated": {"zeta": float, "p_fail": float, "xi_norm": float, "target_all_steps": "bool"},
    "put_option": {"n_anchors": int, "initial_price": float, "horizon": int, "source_up_prob": float},
}


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def sweep_config_from_dict(raw: dict[str, str]) -> SweepConfig:
    cfg = SweepConfig()
    raw = dict(raw)
    try:
        cfg.env = raw.pop("env.name", cfg.env)
        for key, kind in _ENV_KEYS.get(cfg.env, {}).items():
            full = f"env.{key}"
            if full in raw:
                text = raw.pop(full)
                cfg.env_params[key] = _bool(text) if kind == "bool" else kind(text)
        if "sweep.algorithms" in raw:
            cfg.algorithms = [a.strip() for a in raw.pop("sweep.algorithms").split(",") if a.strip()]
        if "sweep.rho" in raw:
            cfg.rhos = _parse_grid(raw.pop("sweep.rho"))
        if "sweep.sigma" in raw:
            cfg.sigmas = _parse_grid(raw.pop("sweep.sigma"))
        if "sweep.perturbations" in raw:
            cfg.perturbations = _parse_grid(raw.pop("sweep.perturbations"))
        if "sweep.seeds" in raw:
            text = raw.pop("sweep.seeds")
            cfg.seeds = [int(x) for x in _parse_grid(text)] if ":" in text else [int(x) for x in text.split(",")]
        if "sweep.workers" in raw:
            cfg.workers = int(raw.pop("sweep.workers"))
        if "agent.eta" in raw:
            cfg.eta = float(raw.pop("agent.eta"))
        if "agent.lambda" in raw:
            cfg.lam = float(raw.pop("agent.lambda"))
        if "agent.beta" in raw:
            text = raw.pop("agent.beta")
            cfg.beta = None if text == "default" else float(text)
        if "agent.episodes" in raw:
            cfg.episodes = int(raw.pop("agent.episodes"))
        if "agent.reference" in raw:
            cfg.reference = raw.pop("agent.reference")
        if "eval.rollouts" in raw:
            cfg.eval_rollouts = int(raw.pop("eval.rollouts"))
        if "output.path" in raw:
            cfg.output = raw.pop("output.path")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if raw:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(raw))}")
    return cfg.validate()


def load_config(path) -> SweepConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return sweep_config_from_dict(parse_config_text(text))


# --------------------------------------------------------------------------
# environments and references


def source_perturbation(cfg: SweepConfig) -> float:
    return cfg.env_params.get("source_up_prob", 0.5) if cfg.env == "put_option" else 0.0


def make_env(cfg: SweepConfig, perturbation: float | None = None):
    """Environment whose target kernel sits at ``perturbation`` (source level if None)."""
    level = source_perturbation(cfg) if perturbation is None else perturbation
    p = cfg.env_params
    if cfg.env == "simulated":
        params = SimulatedEnvParams.from_xi_norm(
            p.get("xi_norm", 0.3), zeta=p.get("zeta", 0.3), p_fail=p.get("p_fail", 0.001),
            q=level, target_all_steps=p.get("target_all_steps", False))
        return build_simulated_env(params)
    params = PutOptionParams(price_up_prob=level, **{k: v for k, v in p.items()})
    return PutOptionEnv(params)


def make_reference(cfg: SweepConfig) -> ReferencePolicy:
    """``uniform``, or for the simulated env the ablation references ``target_first`` / ``mixed_first``.

    ``target_first`` plays (-1,-1,-1,-1) at step 1; ``mixed_first`` splits step 1
    evenly between (-1,-1,-1,-1) and (1,1,1,1). Both are uniform afterwards.
    """
    if cfg.reference == "uniform":
        n = 16 if cfg.env == "simulated" else 2
        return ReferencePolicy.uniform(n)
    if cfg.env != "simulated" or cfg.reference not in ("target_first", "mixed_first"):
        raise ConfigError(f"unknown reference {cfg.reference!r} for env {cfg.env!r}")
    acts = simulated_actions()
    all_neg = int(np.flatnonzero((acts == -1).all(axis=1))[0])
    all_pos = int(np.flatnonzero((acts == 1).all(axis=1))[0])
    table = np.full((3, 16), 1 / 16)
    table[0] = 0.0
    if cfg.reference == "target_first":
        table[0, all_neg] = 1.0
    else:
        table[0, [all_neg, all_pos]] = 0.5
    return ReferencePolicy(table)


# --------------------------------------------------------------------------
# evaluation


def evaluate_policy(policy, env, n_rollouts: int, rng: np.random.Generator,
                    env_rng: np.random.Generator | None = None, target: bool = True):
    """Mean and standard error of the raw episode return over ``n_rollouts`` trajectories.

    Action draws use ``rng``; transitions use ``env_rng`` (``rng`` if omitted).
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    env_rng = rng if env_rng is None else env_rng
    states = env.initial_states(n_rollouts)
    total = np.zeros(n_rollouts)
    for h in range(1, env.H + 1):
        actions = sample_from(policy.probs(h, states), rng.random(n_rollouts))
        r, states = env.step_batch(h, states, actions, env_rng, target=target)
        total += r
    # shift by the first return so identical returns give exactly that mean and zero spread
    dev = total - total[0]
    mean = float(total[0] + dev.mean())
    se = float(dev.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return mean, se


# --------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    algorithm: str
    env: str
    mode: str
    rho_or_sigma: float
    eta: float
    beta: float
    seed: int
    perturbation: float
    metric: str
    value: float

    def sort_key(self):
        return (self.algorithm, self.rho_or_sigma, self.perturbation, self.seed, self.metric, self.run_id)

    def to_csv(self) -> str:
        fields = (self.run_id, self.algorithm, self.env, self.mode, _num(self.rho_or_sigma), _num(self.eta),
                  _num(self.beta), str(self.seed), _num(self.perturbation), self.metric, _num(self.value))
        return ",".join(fields)


def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in result row")
    return repr(x + 0.0)  # normalizes -0.0


@dataclass(frozen=True)
class Cell:
    algorithm: str
    level: float  # rho, sigma, or 0 when unused

    @property
    def label(self) -> str:
        return f"{self.algorithm}@{self.level!r}"

    @property
    def stream_index(self) -> int:
        # stable across grid edits, so adding cells never reshuffles other runs
        return zlib.crc32(self.label.encode())


def sweep_cells(cfg: SweepConfig) -> list[Cell]:
    cells = []
    for algo in cfg.algorithms:
        if algo in ("drmdp", "dr_lsvi_ucb"):
            cells += [Cell(algo, float(r)) for r in cfg.rhos]
        elif algo == "rrmdp":
            cells += [Cell(algo, float(s)) for s in cfg.sigmas]
        else:
            cells.append(Cell(algo, 0.0))
    return cells


def agent_config(cfg: SweepConfig, cell: Cell, seed: int) -> AgentConfig:
    kw = {}
    if cell.algorithm in ("drmdp", "dr_lsvi_ucb"):
        kw["rho"] = cell.level
    elif cell.algorithm == "rrmdp":
        kw["sigma"] = cell.level
    return AgentConfig(mode=cell.algorithm, eta=cfg.eta, lam=cfg.lam, beta=cfg.beta,
                       episodes=cfg.episodes, seed=seed, run_index=cell.stream_index,
                       reference=make_reference(cfg), **kw)


def run_cell(cfg: SweepConfig, cell: Cell, seed: int) -> list[ResultRow]:
    """Train one (cell, seed), evaluate on every perturbation, return its rows."""
    run_id = f"{cell.label}#{seed}"
    env = make_env(cfg)
    if cell.algorithm == "reference":
        policy = reference_policy(env, make_reference(cfg))
        mode, beta, eta, log, acfg = "reference", 0.0, 0.0, None, None
    else:
        acfg = agent_config(cfg, cell, seed)
        policy, log = run_agent(env, acfg)
        mode, beta = acfg.mode, log.beta
        eta = cfg.eta if acfg.soft else 0.0

    def row(pert, metric, value):
        return ResultRow(run_id, cell.algorithm, cfg.env, mode, cell.level, eta, beta, seed,
                         pert, metric, float(value))

    rows = []
    for j, pert in enumerate(cfg.perturbations):
        target_env = make_env(cfg, pert)
        pol_rng = rngmod.stream(seed, cell.stream_index, "eval_policy", j)
        env_rng = rngmod.stream(seed, cell.stream_index, "eval_env", j)
        mean, se = evaluate_policy(policy, target_env, cfg.eval_rollouts, pol_rng, env_rng)
        rows.append(row(pert, "target_return", mean))
        rows.append(row(pert, "target_return_se", se))

    if log is not None:
        src = source_perturbation(cfg)
        rows.append(row(src, "mean_bonus", log.mean_bonus()))
        rows.append(row(src, "train_return", log.rewards.sum(axis=1).mean()))
        if getattr(env, "tabular", False):
            # greedy learners are scored against the regularized objective at the sweep's eta
            orc_mode, level = oracle_target(acfg)
            oracle = oracle_optimal(env, orc_mode, level, cfg.eta, acfg.resolved_reference(env))
            rows.append(row(src, "ave_subopt", ave_subopt(log, oracle, env, acfg)))
    return rows


def oracle_target(acfg: AgentConfig) -> tuple[str, float]:
    """Objective an agent is scored against: its own robust set, or nominal for LSVI-UCB."""
    if acfg.mode == "rrmdp":
        return "rrmdp", acfg.sigma
    if acfg.mode == "lsvi_ucb":
        return "drmdp", 0.0
    return "drmdp", acfg.rho


def _run_task(args):
    cfg, cell, seed = args
    try:
        return run_cell(cfg, cell, seed)
    except Exception as exc:  # surface which run broke
        raise RuntimeError(f"run {cell.label}#{seed} failed: {exc}") from exc


def worker_count(cfg: SweepConfig) -> int:
    env_val = os.environ.get("ROBUSTRL_WORKERS")
    if env_val:
        try:
            return max(1, int(env_val))
        except ValueError as exc:
            raise ConfigError(f"ROBUSTRL_WORKERS must be an integer, got {env_val!r}") from exc
    return max(1, cfg.workers)


def sweep_rows(cfg: SweepConfig) -> list[ResultRow]:
    tasks = [(cfg, cell, seed) for cell in sweep_cells(cfg) for seed in cfg.seeds]
    workers = worker_count(cfg)
    if workers == 1:
        chunks = [_run_task(t) for t in tasks]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=ResultRow.sort_key)


def rows_to_csv(rows: list[ResultRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.to_csv() for r in rows]) + "\n"


def run_sweep(cfg: SweepConfig, output: str | None = None) -> Path:
    """Run the full grid and write the CSV; returns the output path."""
    path = Path(output or cfg.output)
    if path.parent and not path.parent.exists():
        raise OSError(f"output directory {path.parent} does not exist")
    text = rows_to_csv(sweep_rows(cfg))
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def read_csv_rows(path) -> list[dict]:
    import csv
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
