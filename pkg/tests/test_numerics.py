import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustrl.numerics import (REINVERT_EVERY, GramMatrix, check_feature, default_beta, gram_from_features,
                               gram_update, ridge_solve, ucb_bonus)

from conftest import random_simplex


def test_gram_update_unit_vector():
    g = gram_update(GramMatrix(2, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(g.matrix, [[2.0, 0.0], [0.0, 1.0]])
    assert g.count == 1


def test_gram_update_outer_product():
    g = gram_update(GramMatrix(2, 1.0), [0.5, 0.5])
    np.testing.assert_allclose(g.matrix, [[1.25, 0.25], [0.25, 1.25]], atol=0)


def test_gram_update_leaves_input_untouched():
    g = GramMatrix(2, 1.0)
    gram_update(g, [1.0, 0.0])
    np.testing.assert_array_equal(g.matrix, np.eye(2))
    assert g.count == 0


def test_gram_dimension_mismatch():
    with pytest.raises(ValueError):
        gram_update(GramMatrix(3, 1.0), [0.5, 0.5])


def test_gram_matches_batch(rng):
    feats = random_simplex(rng, 100, 3)
    g = GramMatrix(3, 1.0)
    for f in feats:
        g.update(f)
    ref = gram_from_features(feats, 3, 1.0)
    np.testing.assert_allclose(g.matrix, ref.matrix, atol=1e-10)
    assert g.count == 100


def test_gram_inverse_invariant_long_run(rng):
    # crosses several re-inversion boundaries
    g = GramMatrix(4, 0.5)
    for f in random_simplex(rng, 5 * REINVERT_EVERY + 7, 4):
        g.update(f)
        assert np.abs(g.inverse @ g.matrix - np.eye(4)).max() < 1e-8
    assert np.linalg.eigvalsh(g.matrix).min() >= 0.5 - 1e-9
    np.testing.assert_array_equal(g.inverse, g.inverse.T)


def test_ridge_empty_is_zero():
    np.testing.assert_array_equal(ridge_solve(GramMatrix(3, 2.0), np.zeros((0, 3)), []), np.zeros(3))


def test_ridge_scalar_case():
    g = gram_update(GramMatrix(2, 1.0), [1.0, 0.0])
    np.testing.assert_allclose(ridge_solve(g, [[1.0, 0.0]], [2.0]), [1.0, 0.0], atol=1e-15)


def test_ridge_matches_dense_solve(rng):
    X = random_simplex(rng, 50, 3)
    y = rng.uniform(0, 3, 50)
    g = GramMatrix(3, 1.0)
    for f in X:
        g.update(f)
    dense = np.linalg.solve(np.eye(3) + X.T @ X, X.T @ y)
    np.testing.assert_allclose(ridge_solve(g, X, y), dense, atol=1e-9)


def test_ridge_length_mismatch():
    with pytest.raises(ValueError):
        ridge_solve(GramMatrix(2, 1.0), [[1.0, 0.0]], [1.0, 2.0])


def test_bonus_identity_gram():
    assert ucb_bonus(GramMatrix(3, 1.0), [0.2, 0.3, 0.5], 2.0) == pytest.approx(2.0, abs=1e-15)


def test_bonus_after_one_update():
    g = gram_update(GramMatrix(2, 1.0), [1.0, 0.0])
    assert ucb_bonus(g, [1.0, 0.0], 1.0) == pytest.approx(0.7071067811865476, abs=1e-12)


def test_bonus_zero_beta(rng):
    g = gram_from_features(random_simplex(rng, 5, 3), 3)
    assert ucb_bonus(g, [0.1, 0.2, 0.7], 0.0) == 0.0


def test_bonus_negative_beta():
    with pytest.raises(ValueError):
        ucb_bonus(GramMatrix(2), [0.5, 0.5], -1.0)


def test_bonus_monotone_random(rng):
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        g = gram_from_features(random_simplex(rng, int(rng.integers(0, 10)), d), d, rng.uniform(0.1, 2))
        q = random_simplex(rng, 1, d)[0]
        beta = rng.uniform(0, 5)
        before = ucb_bonus(g, q, beta)
        after = ucb_bonus(gram_update(g, random_simplex(rng, 1, d)[0]), q, beta)
        assert after <= before + 1e-12


def test_ridge_norm_bound(rng):
    # nu from targets in [0, H] stays inside 3H sqrt(dk/lambda) once theta is added
    H, d, lam = 3, 4, 1.0
    for _ in range(200):
        k = int(rng.integers(1, 60))
        X = random_simplex(rng, k, d)
        g = gram_from_features(X, d, lam)
        nu = ridge_solve(g, X, rng.uniform(0, H, k))
        theta = random_simplex(rng, 1, d)[0]
        assert np.linalg.norm(theta + nu) <= 3 * H * np.sqrt(d * k / lam)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_order_invariance(n, seed):
    r = np.random.default_rng(seed)
    X = random_simplex(r, n, 3)
    y = r.uniform(0, 3, n)
    perm = r.permutation(n)
    a, b = GramMatrix(3), GramMatrix(3)
    for i in range(n):
        a.update(X[i])
        b.update(X[perm[i]])
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)
    np.testing.assert_allclose(ridge_solve(a, X, y), ridge_solve(b, X[perm], y[perm]), atol=1e-10)


def test_check_feature():
    check_feature([0.3, 0.7], 2)
    check_feature([0.3, 2.0], 2, relaxed=True)
    with pytest.raises(ValueError):
        check_feature([0.3, 0.6], 2)
    with pytest.raises(ValueError):
        check_feature([-0.1, 1.1], 2)
    with pytest.raises(ValueError):
        check_feature([0.5, 0.5], 3)


def test_default_beta_value():
    # d=4, H=3, K=100, |A|=16
    assert default_beta(4, 3, 100, 16) == pytest.approx(12 * np.sqrt(np.log(19200)))


def test_gram_rejects_bad_ridge():
    with pytest.raises(ValueError):
        GramMatrix(2, 0.0)
