"""Linear-MDP environments with a nominal (source) and a perturbed (target) kernel.

Steps are 1-indexed (``h = 1..H``). Every environment exposes the same
vectorized surface used by the agents and the evaluator:

* ``features(h, states) -> (n, A, d)``
* ``is_fail(states) -> (n,) bool``
* ``step_batch(h, states, actions, rng, target=False) -> (rewards, next_states)``
* ``initial_states(n) -> (n,)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SIMPLEX_TOL

KERNEL_TOL = 1e-12


@dataclass
class Trajectory:
    states: np.ndarray  # (H+1,)
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


class LinearEnv:
    """Shared behaviour; subclasses fill in features, kernels and initial states."""

    H: int
    d: int
    n_actions: int
    theta: np.ndarray  # (H, d)
    relaxed_features: bool = False
    tabular: bool = False
    name: str = "env"

    def _check_h(self, h: int):
        if not 1 <= h <= self.H:
            raise ValueError(f"step {h} outside 1..{self.H}")

    def rewards(self, h: int, states, actions) -> np.ndarray:
        feats = self.features(h, states)
        actions = np.asarray(actions).reshape(-1)
        return feats[np.arange(len(actions)), actions] @ self.theta[h - 1]

    def step_source(self, h: int, s, a: int, rng: np.random.Generator):
        r, nxt = self.step_batch(h, np.asarray([s]), np.asarray([a]), rng, target=False)
        return float(r[0]), nxt[0].item()

    def step_target(self, h: int, s, a: int, rng: np.random.Generator):
        r, nxt = self.step_batch(h, np.asarray([s]), np.asarray([a]), rng, target=True)
        return float(r[0]), nxt[0].item()

    def exact_kernel(self, h: int, s, a: int, target: bool = False) -> np.ndarray:
        raise TypeError(f"{self.name} has no finite state space; exact kernel unavailable")


class TabularFactorModel(LinearEnv):
    """Finite-state linear MDP given by explicit factor distributions.

    ``phi``: (S, A, d) features; ``mu``: (H, d, S) nominal factors;
    ``theta``: (H, d); ``target_mu`` optionally replaces ``mu`` for the
    perturbed kernel. ``initial_state`` is fixed.
    """

    tabular = True

    def __init__(self, phi, mu, theta, fail_state: int, initial_state: int = 0,
                 target_mu=None, name: str = "tabular"):
        self.phi = np.asarray(phi, dtype=np.float64)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.theta = np.asarray(theta, dtype=np.float64)
        self.target_mu = self.mu if target_mu is None else np.asarray(target_mu, dtype=np.float64)
        self.n_states, self.n_actions, self.d = self.phi.shape
        self.H = self.mu.shape[0]
        if fail_state is None:
            raise ValueError("a fail state is required")
        self.fail_state = int(fail_state)
        self.initial_state = int(initial_state)
        self.name = name
        self._validate()

    def _validate(self):
        S, A, d, H = self.n_states, self.n_actions, self.d, self.H
        if self.mu.shape != (H, d, S) or self.target_mu.shape != (H, d, S):
            raise ValueError("factor arrays must have shape (H, d, S)")
        if self.theta.shape != (H, d):
            raise ValueError("theta must have shape (H, d)")
        if not 0 <= self.fail_state < S:
            raise ValueError("fail state index out of range")
        if np.any(self.phi < -SIMPLEX_TOL) or np.any(np.abs(self.phi.sum(-1) - 1) > SIMPLEX_TOL):
            raise ValueError("features must lie on the simplex")
        for mu in (self.mu, self.target_mu):
            if np.any(mu < 0) or np.any(np.abs(mu.sum(-1) - 1) > KERNEL_TOL):
                raise ValueError("factor distributions must be probability vectors")
        r = np.einsum("sad,hd->hsa", self.phi, self.theta)
        if np.any(r < -1e-12) or np.any(r > 1 + 1e-12):
            raise ValueError("rewards must lie in [0, 1]")
        if np.any(np.abs(r[:, self.fail_state]) > 1e-12):
            raise ValueError("fail state must have zero reward")
        for mu in (self.mu, self.target_mu):
            stay = np.einsum("ad,hd->ha", self.phi[self.fail_state], mu[:, :, self.fail_state])
            if np.any(np.abs(stay - 1) > KERNEL_TOL):
                raise ValueError("fail state must be absorbing")

    def features(self, h: int, states) -> np.ndarray:
        return self.phi[np.asarray(states, dtype=np.int64).reshape(-1)]

    def reward_table(self) -> np.ndarray:
        """(H, S, A) rewards."""
        return np.einsum("sad,hd->hsa", self.phi, self.theta)

    def is_fail(self, states) -> np.ndarray:
        return np.asarray(states).reshape(-1) == self.fail_state

    def initial_states(self, n: int) -> np.ndarray:
        return np.full(n, self.initial_state, dtype=np.int64)

    def exact_kernel(self, h: int, s, a: int, target: bool = False) -> np.ndarray:
        self._check_h(h)
        mu = self.target_mu if target else self.mu
        return self.phi[int(s), int(a)] @ mu[h - 1]

    def step_batch(self, h, states, actions, rng, target=False):
        self._check_h(h)
        states = np.asarray(states, dtype=np.int64).reshape(-1)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        mu = (self.target_mu if target else self.mu)[h - 1]
        feats = self.phi[states, actions]
        rows = feats @ mu
        cdf = np.cumsum(rows, axis=1)
        u = rng.random(len(states))[:, None] * cdf[:, -1:]
        nxt = np.minimum((cdf <= u).sum(axis=1), self.n_states - 1)
        return feats @ self.theta[h - 1], nxt


# --------------------------------------------------------------------------
# off-dynamics 5-state MDP


def simulated_actions() -> np.ndarray:
    """The 16 actions in {-1, 1}^4; index bits read most-significant first, bit 1 means +1."""
    idx = np.arange(16)
    bits = (idx[:, None] >> np.arange(3, -1, -1)) & 1
    return np.where(bits == 1, 1.0, -1.0)


@dataclass(frozen=True)
class SimulatedEnvParams:
    zeta: float = 0.3
    p_fail: float = 0.001
    xi: tuple = (0.075, 0.075, 0.075, 0.075)
    q: float = 0.0
    # apply the perturbed factors at every step instead of the first only
    target_all_steps: bool = False

    @classmethod
    def from_xi_norm(cls, xi_norm: float, **kw) -> "SimulatedEnvParams":
        return cls(xi=(xi_norm / 4,) * 4, **kw)


S1, S2, S3, S4, S5 = range(5)


def build_simulated_env(params: SimulatedEnvParams = SimulatedEnvParams()) -> TabularFactorModel:
    zeta, p, q = params.zeta, params.p_fail, params.q
    xi = np.asarray(params.xi, dtype=np.float64)
    if xi.shape != (4,):
        raise ValueError("xi must have four entries")
    if not 0 <= p <= 1 or not 0 <= q <= 1:
        raise ValueError("p_fail and q must lie in [0, 1]")
    acts = simulated_actions()
    w = zeta + acts @ xi  # weight on the fourth feature
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("zeta and xi push features off the simplex")

    phi = np.zeros((5, 16, 4))
    for s, i in ((S1, 0), (S2, 1), (S3, 2)):
        phi[s, :, i] = 1 - w
        phi[s, :, 3] = w
    phi[S4, :, 2] = 1.0
    phi[S5, :, 3] = 1.0

    H = 3
    delta = np.eye(5)
    source = np.stack([
        (1 - p) * delta[S2] + p * delta[S4],
        (1 - p) * delta[S3] + p * delta[S4],
        delta[S4],
        delta[S5],
    ])
    perturbed = np.stack([
        delta[S2],
        delta[S3],
        delta[S4],
        (1 - q) * delta[S5] + q * delta[S4],
    ])
    mu = np.repeat(source[None], H, axis=0)
    target_mu = mu.copy()
    if params.target_all_steps:
        target_mu[:] = perturbed
    else:
        target_mu[0] = perturbed
    theta = np.array([[0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 1]], dtype=np.float64)
    return TabularFactorModel(phi, mu, theta, fail_state=S4, initial_state=S1,
                              target_mu=target_mu, name="simulated")


def random_tabular_model(rng: np.random.Generator, n_states: int = 4, n_actions: int = 3,
                         d: int = 3, horizon: int = 3) -> TabularFactorModel:
    """Random model with the last state as fail state and the last factor pinned to it."""
    if n_states < 2 or d < 2:
        raise ValueError("need at least two states and two factors")
    fail = n_states - 1
    phi = rng.dirichlet(np.ones(d), size=(n_states, n_actions))
    phi[fail] = 0.0
    phi[fail, :, d - 1] = 1.0
    mu = rng.dirichlet(np.ones(n_states), size=(horizon, d))
    mu[:, d - 1] = 0.0
    mu[:, d - 1, fail] = 1.0
    theta = rng.uniform(0, 1, size=(horizon, d))
    theta[:, d - 1] = 0.0
    return TabularFactorModel(phi, mu, theta, fail_state=fail, initial_state=0, name="random")


# --------------------------------------------------------------------------
# American put option

EXERCISED = -1.0


@dataclass(frozen=True)
class PutOptionParams:
    price_up_prob: float = 0.5  # target-domain price-up probability
    source_up_prob: float = 0.5
    up_factor: float = 1.02
    down_factor: float = 0.98
    strike: float = 100.0
    n_anchors: int = 20
    first_anchor: float = 80.0
    anchor_span: float = 60.0
    horizon: int = 10
    initial_price: float = 100.0
    payoff_scale: float = 100.0

    @property
    def spacing(self) -> float:
        return self.anchor_span / self.n_anchors

    @property
    def anchors(self) -> np.ndarray:
        return self.first_anchor + self.spacing * np.arange(self.n_anchors)


class PutOptionEnv(LinearEnv):
    """Price process with actions exercise (0) and hold (1).

    Exercising pays ``max(0, strike - s) / payoff_scale`` and moves to an
    absorbing zero-reward state, which plays the fail-state role. Features are
    nonnegative but not normalized, hence ``relaxed_features``.
    """

    relaxed_features = True
    name = "put_option"
    EXERCISE, HOLD = 0, 1

    def __init__(self, params: PutOptionParams = PutOptionParams()):
        if not 0 < params.price_up_prob < 1 or not 0 < params.source_up_prob < 1:
            raise ValueError("price-up probabilities must lie in (0, 1)")
        anchors = params.anchors
        if np.any(np.diff(anchors) <= 0):
            raise ValueError("anchors must be strictly increasing")
        self.params = params
        self.H = params.horizon
        self.n_actions = 2
        self.d = params.n_anchors + 1
        self.theta = np.zeros((self.H, self.d))
        self.theta[:, -1] = 1.0
        self.fail_state = EXERCISED

    def payoff(self, prices) -> np.ndarray:
        """Raw (unscaled) exercise payoff."""
        return np.maximum(0.0, self.params.strike - np.asarray(prices, dtype=np.float64))

    def features(self, h: int, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64).reshape(-1)
        live = s != EXERCISED
        out = np.zeros((len(s), 2, self.d))
        out[:, self.EXERCISE, -1] = np.where(live, self.payoff(s) / self.params.payoff_scale, 0.0)
        tent = np.maximum(0.0, 1.0 - np.abs(s[:, None] - self.params.anchors[None, :]) / self.params.spacing)
        out[:, self.HOLD, :-1] = np.where(live[:, None], tent, 0.0)
        return out

    def is_fail(self, states) -> np.ndarray:
        return np.asarray(states, dtype=np.float64).reshape(-1) == EXERCISED

    def initial_states(self, n: int) -> np.ndarray:
        return np.full(n, self.params.initial_price)

    def step_batch(self, h, states, actions, rng, target=False):
        self._check_h(h)
        s = np.asarray(states, dtype=np.float64).reshape(-1)
        a = np.asarray(actions, dtype=np.int64).reshape(-1)
        live = s != EXERCISED
        p = self.params.price_up_prob if target else self.params.source_up_prob
        up = rng.random(len(s)) < p
        moved = s * np.where(up, self.params.up_factor, self.params.down_factor)
        exercise = live & (a == self.EXERCISE)
        reward = np.where(exercise, self.payoff(s) / self.params.payoff_scale, 0.0)
        nxt = np.where(live & ~exercise, moved, EXERCISED)
        return reward, nxt


# --------------------------------------------------------------------------
# rollouts


def rollout(env: LinearEnv, policy, rng: np.random.Generator, target: bool = False,
            step_rng: np.random.Generator | None = None) -> Trajectory:
    """One trajectory from the fixed initial state.

    Action draws come from ``rng`` and transition draws from ``step_rng``
    (defaults to ``rng``).
    """
    step_rng = rng if step_rng is None else step_rng
    s = env.initial_states(1)
    states, actions, rewards = [s[0]], [], []
    for h in range(1, env.H + 1):
        a = policy.sample_action(h, s[0], rng)
        r, s = env.step_batch(h, s, np.asarray([a]), step_rng, target=target)
        states.append(s[0])
        actions.append(a)
        rewards.append(r[0])
    return Trajectory(np.asarray(states), np.asarray(actions, dtype=np.int64), np.asarray(rewards))
