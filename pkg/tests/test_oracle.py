import numpy as np
import pytest

from robustrl.agents import AgentConfig, EpisodeLog, run_agent
from robustrl.envs import PutOptionEnv, SimulatedEnvParams, TabularFactorModel, build_simulated_env, random_tabular_model
from robustrl.oracle import (ave_subopt, bellman_residual, expected_return, oracle_optimal, oracle_policy_value,
                             robust_factor_values)
from robustrl.policy import ReferencePolicy, kl_divergence, softmax_probs


def random_policy(rng, model, ref_table=None):
    pi = rng.dirichlet(np.ones(model.n_actions), size=(model.H, model.n_states))
    if ref_table is not None:
        pi = pi * (ref_table > 0)
        pi /= pi.sum(-1, keepdims=True)
    return pi


def nominal_dp(model, eta, ref):
    """Non-robust KL-regularized DP written against explicit kernels."""
    V = np.zeros(model.n_states)
    out = []
    for h in range(model.H, 0, -1):
        Q = np.zeros((model.n_states, model.n_actions))
        for s in range(model.n_states):
            for a in range(model.n_actions):
                Q[s, a] = model.reward_table()[h - 1, s, a] + model.exact_kernel(h, s, a) @ V
        Q[model.fail_state] = 0
        V = np.log((ref * np.exp(eta * Q)).sum(-1)) / eta
        out.append(V)
    return out[::-1]


def grid_dual(mu0, v, rho, cap, step):
    best = -np.inf
    for start in np.arange(0, cap + step, 2e5 * step):
        alphas = np.arange(start, min(start + 2e5 * step, cap + step / 2), step)
        if alphas.size:
            best = max(best, float((np.minimum(v[:, None], alphas[None, :]).T @ mu0 - rho * alphas).max()))
    return best


def grid_oracle(model, rho, eta, step):
    V = np.zeros(model.n_states)
    for h in range(model.H, 0, -1):
        nu = np.array([grid_dual(model.mu[h - 1, i], V, rho, model.H, step) for i in range(model.d)])
        Q = model.reward_table()[h - 1] + model.phi @ nu
        Q[model.fail_state] = 0
        V = np.log(np.exp(eta * Q).mean(-1)) / eta
    return V


def test_single_stage_closed_form(rng):
    m = random_tabular_model(rng, 4, 3, 3, 1)
    res = oracle_optimal(m, "drmdp", 0.4, 7.0)
    np.testing.assert_allclose(res.Q[0], m.reward_table()[0], atol=1e-15)
    np.testing.assert_allclose(res.V[0], np.log(np.exp(7 * m.reward_table()[0]).mean(-1)) / 7, atol=1e-12)


def test_rho_zero_is_nominal(rng):
    for _ in range(10):
        m = random_tabular_model(rng, 4, 3, 3, 3)
        ref = rng.dirichlet(np.ones(3))
        res = oracle_optimal(m, "drmdp", 0.0, 3.0, ReferencePolicy(ref))
        for h, v in enumerate(nominal_dp(m, 3.0, ref)):
            np.testing.assert_allclose(res.V[h], v, atol=1e-12)


def test_matches_grid_dp():
    m = random_tabular_model(np.random.default_rng(5), n_states=3, n_actions=2, d=2, horizon=2)
    res = oracle_optimal(m, "drmdp", 0.25, 5.0)
    np.testing.assert_allclose(res.V[0], grid_oracle(m, 0.25, 5.0, 1e-6), atol=5e-6)


def test_bellman_residual_small(rng):
    for _ in range(30):
        m = random_tabular_model(rng, int(rng.integers(2, 6)), int(rng.integers(1, 5)), int(rng.integers(2, 5)),
                                 int(rng.integers(1, 5)))
        for mode, level in (("drmdp", rng.uniform()), ("rrmdp", rng.uniform(0.05, 3))):
            assert bellman_residual(m, oracle_optimal(m, mode, level, rng.uniform(0.5, 50))) <= 1e-10


def test_policy_is_softmax_of_q(rng):
    m = random_tabular_model(rng, 5, 4, 3, 3)
    ref = ReferencePolicy(rng.dirichlet(np.ones(4), size=3))
    res = oracle_optimal(m, "rrmdp", 0.8, 4.0, ref)
    for h in range(3):
        np.testing.assert_allclose(res.policy[h], softmax_probs(res.ref[h], res.Q[h], 4.0), atol=1e-12)


def test_optimal_policy_value_consistency(rng):
    m = random_tabular_model(rng, 4, 3, 3, 3)
    for mode, level in (("drmdp", 0.3), ("rrmdp", 1.0)):
        res = oracle_optimal(m, mode, level, 10.0)
        V, Q = oracle_policy_value(m, mode, level, 10.0, None, res.policy)
        np.testing.assert_allclose(V, res.V, atol=1e-10)
        np.testing.assert_allclose(Q, res.Q, atol=1e-10)


def test_reference_policy_has_no_kl(rng):
    m = random_tabular_model(rng, 4, 3, 3, 2)
    ref = np.full((2, 4, 3), 1 / 3)
    V, Q = oracle_policy_value(m, "drmdp", 0.2, 5.0, None, ref)
    for h in range(2):
        np.testing.assert_allclose(V[h], (ref[h] * Q[h]).sum(-1), atol=1e-15)


def test_dominance(rng):
    for _ in range(10):
        m = random_tabular_model(rng, 4, 3, 3, 3)
        for mode, level in (("drmdp", 0.3), ("rrmdp", 0.5)):
            res = oracle_optimal(m, mode, level, 5.0)
            for _ in range(30):
                V, _ = oracle_policy_value(m, mode, level, 5.0, None, random_policy(rng, m))
                assert np.all(V[0] <= res.V[0] + 1e-9)


def test_support_violation():
    m = random_tabular_model(np.random.default_rng(0), 3, 2, 2, 2)
    ref = ReferencePolicy([1.0, 0.0])
    with pytest.raises(ValueError):
        oracle_policy_value(m, "drmdp", 0.1, 1.0, ref, np.full((2, 3, 2), 0.5))


def test_monotone_in_level(rng):
    for _ in range(10):
        m = random_tabular_model(rng, 4, 3, 3, 3)
        rho_vals = [oracle_optimal(m, "drmdp", r, 5.0).V[0] for r in np.linspace(0, 1, 6)]
        sig_vals = [oracle_optimal(m, "rrmdp", s, 5.0).V[0] for s in (0.1, 0.5, 1.0, 2.0, 3.0)]
        assert all(np.all(b <= a + 1e-12) for a, b in zip(rho_vals, rho_vals[1:]))
        assert all(np.all(b >= a - 1e-12) for a, b in zip(sig_vals, sig_vals[1:]))


def test_linearity_certificate(rng):
    m = random_tabular_model(rng, 4, 3, 3, 3)
    phi = m.phi.copy()
    phi[1, 2] = phi[0, 0]
    m2 = TabularFactorModel(phi, m.mu, m.theta, fail_state=m.fail_state)
    res = oracle_optimal(m2, "drmdp", 0.35, 5.0)
    r = m2.reward_table()
    for h in range(3):
        assert abs((res.Q[h, 1, 2] - r[h, 1, 2]) - (res.Q[h, 0, 0] - r[h, 0, 0])) <= 1e-12


def test_negative_values_shift_is_exact(rng):
    m = random_tabular_model(rng, 4, 3, 3, 2)
    v = rng.uniform(0, 2, 4)
    v[m.fail_state] = 0
    base = robust_factor_values(m, 1, v, "drmdp", 0.3)
    np.testing.assert_allclose(robust_factor_values(m, 1, v - 0.7, "drmdp", 0.3), base - 0.7, atol=1e-12)


def test_errors():
    class NoFail:
        tabular = True
        fail_state = None

    with pytest.raises(ValueError):
        oracle_optimal(NoFail(), "drmdp", 0.1, 1.0)
    with pytest.raises(TypeError):
        oracle_optimal(PutOptionEnv(), "drmdp", 0.1, 1.0)
    m = random_tabular_model(np.random.default_rng(0), 3, 2, 2, 2)
    with pytest.raises(ValueError):
        oracle_optimal(m, "kl", 0.1, 1.0)
    with pytest.raises(ValueError):
        oracle_optimal(m, "drmdp", 1.5, 1.0)


def _log_from_nu(model, nu_rows, beta=0.0):
    K = len(nu_rows)
    H, d = model.H, model.d
    return EpisodeLog("drmdp", beta, np.zeros((K, H + 1), dtype=np.int64), np.zeros((K, H), dtype=np.int64),
                      np.zeros((K, H)), np.zeros((K, H)), np.zeros(K), np.asarray(nu_rows),
                      np.zeros((K, H, d)))


def test_ave_subopt_optimal_and_reference(rng):
    m = random_tabular_model(rng, 4, 3, 3, 3)
    cfg = AgentConfig(mode="drmdp", rho=0.3, eta=5.0)
    res = oracle_optimal(m, "drmdp", 0.3, 5.0)
    # episode 1 always plays the reference; later episodes use nu* and reproduce Q* exactly
    V_ref, _ = oracle_policy_value(m, "drmdp", 0.3, 5.0, None, np.full((3, 4, 3), 1 / 3))
    gap = res.V[0, 0] - V_ref[0, 0]
    assert gap > 0
    assert ave_subopt(_log_from_nu(m, [res.nu]), res, m, cfg) == pytest.approx(gap, abs=1e-12)
    log = _log_from_nu(m, [res.nu] * 5)
    assert ave_subopt(log, res, m, cfg) == pytest.approx(gap / 5, abs=1e-12)


def test_ave_subopt_nonnegative_on_runs():
    env = build_simulated_env(SimulatedEnvParams.from_xi_norm(0.3))
    cfg = AgentConfig(mode="drmdp", rho=0.3, episodes=30, beta=2.0)
    _, log = run_agent(env, cfg)
    assert ave_subopt(log, oracle_optimal(env, "drmdp", 0.3, 100.0), env, cfg) >= -1e-12


def test_ave_subopt_needs_tabular():
    with pytest.raises(TypeError):
        ave_subopt(None, None, PutOptionEnv(), AgentConfig())


def test_expected_return_reference(rng):
    env = build_simulated_env(SimulatedEnvParams.from_xi_norm(0.3, q=1.0))
    uni = np.full((3, 5, 16), 1 / 16)
    # from s2 at h=2: reward E[w]=0.3, then s5 (pays 1) w.p. 0.3 or s3 (pays 0.3) w.p. 0.7(1-p)
    v2 = 0.3 + 0.3 + 0.7 * 0.999 * 0.3
    assert expected_return(env, uni) == pytest.approx(0.3 * 2 + 0.7 * 0.999 * v2, abs=1e-12)
    # target at q=1: the s5 route becomes the fail state and the s2 route loses its fail branch
    assert expected_return(env, uni, target=True) == pytest.approx(0.7 * v2, abs=1e-12)
