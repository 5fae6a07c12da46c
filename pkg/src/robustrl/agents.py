"""Online learners: DR-RPO (DRMDP and RRMDP modes) and the LSVI-UCB / DR-LSVI-UCB baselines.

All four share one loop. Each episode rolls out the policy induced by the
previous episode's optimistic Q-estimate, then runs a backward pass
``h = H..1`` that refits the per-step parameters on the trajectories of all
earlier episodes.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .duality import dual_max_batch, rrmdp_truncate_targets
from .numerics import GramMatrix, default_beta, ridge_solve
from .policy import (FixedPolicy, GreedyPolicy, ReferencePolicy, SoftmaxPolicy,
                     greedy_probs, log_partition_value, sample_from, softmax_probs)

MODES = ("drmdp", "rrmdp", "lsvi_ucb", "dr_lsvi_ucb")
SOFT_MODES = ("drmdp", "rrmdp")
ROBUST_DUAL_MODES = ("drmdp", "dr_lsvi_ucb")


@dataclass
class AgentConfig:
    mode: str = "drmdp"
    rho: float = 0.3
    sigma: float = 1.0
    eta: float = 100.0
    lam: float = 1.0
    beta: float | None = None  # None -> default_beta(d, H, K, |A|)
    episodes: int = 100
    seed: int = 0
    run_index: int = 0
    reference: ReferencePolicy | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ROBUST_DUAL_MODES and not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.mode == "rrmdp" and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.mode in SOFT_MODES and not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")

    @property
    def soft(self) -> bool:
        return self.mode in SOFT_MODES

    def resolved_beta(self, env) -> float:
        if self.beta is not None:
            return float(self.beta)
        return default_beta(env.d, env.H, self.episodes, env.n_actions)

    def resolved_reference(self, env) -> ReferencePolicy:
        return self.reference or ReferencePolicy.uniform(env.n_actions)


@dataclass
class QParameters:
    """Per-step linear parameters of the clipped optimistic Q-estimate.

    ``Q_h(s, a) = clip(phi^T (theta_h + nu_h) + beta * phi^T bonus_diag_h, 0, H - h + 1)``
    and zero at the fail state. ``bonus_diag_h`` holds ``sqrt(diag(Lambda_h^{-1}))``.
    """

    env: object
    nu: np.ndarray  # (H, d)
    bonus_diag: np.ndarray  # (H, d)
    beta: float
    is_zero: bool = False  # stands in for the initial estimate Q^0 = 0

    @classmethod
    def zero(cls, env) -> "QParameters":
        return cls(env, np.zeros((env.H, env.d)), np.zeros((env.H, env.d)), 0.0, is_zero=True)

    def q(self, h: int, states) -> np.ndarray:
        states = np.asarray(states).reshape(-1)
        env = self.env
        if self.is_zero:
            return np.zeros((len(states), env.n_actions))
        feats = env.features(h, states)
        lin = feats @ (env.theta[h - 1] + self.nu[h - 1])
        bonus = self.beta * (feats @ self.bonus_diag[h - 1])
        cap = env.H - h + 1
        out = np.clip(lin + bonus, 0.0, cap)
        out[env.is_fail(states)] = 0.0
        return out

    def bonus(self, h: int, states, actions) -> np.ndarray:
        feats = self.env.features(h, states)
        actions = np.asarray(actions).reshape(-1)
        return self.beta * (feats[np.arange(len(actions)), actions] @ self.bonus_diag[h - 1])

    def to_dict(self) -> dict:
        return {"nu": self.nu.tolist(), "bonus_diag": self.bonus_diag.tolist(),
                "beta": self.beta, "is_zero": self.is_zero}

    @classmethod
    def from_dict(cls, env, data: dict) -> "QParameters":
        return cls(env, np.asarray(data["nu"], dtype=np.float64),
                   np.asarray(data["bonus_diag"], dtype=np.float64),
                   float(data["beta"]), bool(data.get("is_zero", False)))


def make_policy(params: QParameters, cfg: AgentConfig, env):
    """The behaviour policy induced by a Q-estimate under the given mode."""
    if cfg.soft:
        return SoftmaxPolicy(cfg.resolved_reference(env), cfg.eta, params.q)
    return GreedyPolicy(params.q, env.n_actions)


def state_values(params: QParameters, cfg: AgentConfig, env, h: int, states) -> np.ndarray:
    """``V_h(s)``: log-partition value for soft modes, clipped max for greedy ones."""
    q = params.q(h, states)
    if cfg.soft:
        ref = cfg.resolved_reference(env).probs(h, states)
        v = log_partition_value(ref, q, cfg.eta)
    else:
        v = q.max(axis=1)
    return np.clip(v, 0.0, env.H - h + 1)


# --------------------------------------------------------------------------
# regressions


def regress_nu_drmdp(features, values, gram: GramMatrix, rho: float, cap: float) -> np.ndarray:
    """``nu_i = max_alpha [Lambda^{-1} sum phi min(v, alpha)]_i - rho * alpha`` per coordinate."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        return np.zeros(gram.dim)
    features = np.asarray(features, dtype=np.float64).reshape(-1, gram.dim)
    coeffs = gram.inverse @ features.T  # (d, n): c_{i,tau} = (Lambda^{-1} phi_tau)_i
    nu, _ = dual_max_batch(coeffs, values, rho, cap)
    return nu


def regress_nu_rrmdp(features, values, gram: GramMatrix, sigma: float) -> np.ndarray:
    """Ridge fit on targets truncated at ``sigma``; ``sigma=inf`` disables truncation."""
    return ridge_solve(gram, features, rrmdp_truncate_targets(values, sigma))


def backward_pass(env, cfg: AgentConfig, beta: float, grams: list[GramMatrix],
                  features: np.ndarray, next_states: np.ndarray) -> QParameters:
    """Refit every step from past data.

    ``features[tau, h-1]`` is ``phi(s_h^tau, a_h^tau)`` and ``next_states[tau, h-1]``
    is ``s_{h+1}^tau``; ``grams[h-1]`` must already contain exactly those features.
    Next-state values come from the step-(h+1) parameters fitted earlier in this pass.
    """
    H, d = env.H, env.d
    params = QParameters(env, np.zeros((H, d)), np.zeros((H, d)), beta)
    n = features.shape[0]
    for h in range(H, 0, -1):
        g = grams[h - 1]
        params.bonus_diag[h - 1] = g.inv_diag_sqrt()
        if h == H or n == 0:
            continue
        v = state_values(params, cfg, env, h + 1, next_states[:, h - 1])
        X = features[:, h - 1]
        if cfg.mode in ROBUST_DUAL_MODES:
            params.nu[h - 1] = regress_nu_drmdp(X, v, g, cfg.rho, env.H)
        elif cfg.mode == "rrmdp":
            params.nu[h - 1] = regress_nu_rrmdp(X, v, g, cfg.sigma)
        else:
            params.nu[h - 1] = ridge_solve(g, X, v)
    return params


# --------------------------------------------------------------------------
# episode log


@dataclass
class EpisodeLog:
    mode: str
    beta: float
    states: np.ndarray  # (K, H+1)
    actions: np.ndarray  # (K, H)
    rewards: np.ndarray  # (K, H)
    bonuses: np.ndarray  # (K, H): Gamma_h^k at the visited pair
    values: np.ndarray  # (K,): V_1^k(s_1^k) from the episode-k estimate
    nu: np.ndarray  # (K, H, d): parameters fitted at the end of episode k
    bonus_diag: np.ndarray  # (K, H, d)
    wall_clock: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def episodes(self) -> int:
        return self.actions.shape[0]

    def params_before(self, env, k: int) -> QParameters:
        """Parameters that drove episode ``k`` (1-indexed): those fitted after episode ``k-1``."""
        if k == 1:
            return QParameters.zero(env)
        return QParameters(env, self.nu[k - 2], self.bonus_diag[k - 2], self.beta)

    def params_after(self, env, k: int) -> QParameters:
        return QParameters(env, self.nu[k - 1], self.bonus_diag[k - 1], self.beta)

    def mean_bonus(self) -> float:
        """``(1/K) sum_k sum_h Gamma_h^k``."""
        return float(self.bonuses.sum() / self.episodes)

    def to_csv(self) -> str:
        """Per-(episode, step) rows; wall-clock is left out so output is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "step", "state", "action", "reward", "next_state", "bonus", "value"])
        K, H = self.actions.shape
        for k in range(K):
            for h in range(H):
                w.writerow([k + 1, h + 1, repr(float(self.states[k, h])), int(self.actions[k, h]),
                            repr(float(self.rewards[k, h])), repr(float(self.states[k, h + 1])),
                            repr(float(self.bonuses[k, h])), repr(float(self.values[k]))])
        return buf.getvalue()


# --------------------------------------------------------------------------
# the loop


def _run(env, cfg: AgentConfig):
    H, d, K = env.H, env.d, cfg.episodes
    beta = cfg.resolved_beta(env)
    policy_rng = rngmod.stream(cfg.seed, cfg.run_index, "train_policy")
    env_rng = rngmod.stream(cfg.seed, cfg.run_index, "train_env")
    ref = cfg.resolved_reference(env)

    grams = [GramMatrix(d, cfg.lam) for _ in range(H)]
    features = np.zeros((K, H, d))
    states = np.zeros((K, H + 1), dtype=np.asarray(env.initial_states(1)).dtype)
    actions = np.zeros((K, H), dtype=np.int64)
    rewards = np.zeros((K, H))
    bonuses = np.zeros((K, H))
    values = np.zeros(K)
    nus = np.zeros((K, H, d))
    diags = np.zeros((K, H, d))
    clock = np.zeros(K)

    params = QParameters.zero(env)
    for k in range(K):
        t0 = time.perf_counter()
        # rollout with the policy of the previous estimate
        s = env.initial_states(1)
        states[k, 0] = s[0]
        for h in range(1, H + 1):
            q = params.q(h, s)
            if cfg.soft:
                probs = softmax_probs(ref.probs(h, s), q, cfg.eta)
            else:
                probs = greedy_probs(q)
            a = sample_from(probs, policy_rng.random(1))
            feat = env.features(h, s)[0, a[0]]
            r, s = env.step_batch(h, s, a, env_rng)
            features[k, h - 1] = feat
            actions[k, h - 1] = a[0]
            rewards[k, h - 1] = r[0]
            states[k, h] = s[0]

        # Gram matrices cover episodes 1..k-1 (0-indexed: < k)
        if k >= 1:
            for h in range(H):
                grams[h].update(features[k - 1, h])
        params = backward_pass(env, cfg, beta, grams, features[:k], states[:k, 1:])

        for h in range(1, H + 1):
            bonuses[k, h - 1] = params.bonus(h, states[k, h - 1:h], actions[k, h - 1:h])[0]
        values[k] = state_values(params, cfg, env, 1, states[k, :1])[0]
        nus[k] = params.nu
        diags[k] = params.bonus_diag
        clock[k] = time.perf_counter() - t0

    log = EpisodeLog(cfg.mode, beta, states, actions, rewards, bonuses, values, nus, diags, clock)
    return make_policy(params, cfg, env), log


def run_drrpo(env, cfg: AgentConfig):
    if cfg.mode not in SOFT_MODES:
        raise ValueError(f"DR-RPO runs in drmdp or rrmdp mode, not {cfg.mode!r}")
    return _run(env, cfg)


def run_lsvi_ucb(env, cfg: AgentConfig):
    if cfg.mode != "lsvi_ucb":
        raise ValueError(f"expected mode 'lsvi_ucb', got {cfg.mode!r}")
    return _run(env, cfg)


def run_dr_lsvi_ucb(env, cfg: AgentConfig):
    if cfg.mode != "dr_lsvi_ucb":
        raise ValueError(f"expected mode 'dr_lsvi_ucb', got {cfg.mode!r}")
    return _run(env, cfg)


def run_agent(env, cfg: AgentConfig):
    """Dispatch on ``cfg.mode``."""
    return {"drmdp": run_drrpo, "rrmdp": run_drrpo,
            "lsvi_ucb": run_lsvi_ucb, "dr_lsvi_ucb": run_dr_lsvi_ucb}[cfg.mode](env, cfg)


def reference_policy(env, reference: ReferencePolicy | None = None) -> FixedPolicy:
    return FixedPolicy(reference or ReferencePolicy.uniform(env.n_actions))


def nonrobust_sigma() -> float:
    """Truncation level that turns the RRMDP regression into a plain ridge fit."""
    return math.inf
