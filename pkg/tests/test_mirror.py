import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import matrix_game
from mgx.game import MarkovGame
from mgx.harness import gen_random_game, gen_turn_based
from mgx.mirror import (Exp3Context, LossEstimate, MirrorDescentLearner, estimate_one_step, estimate_q1,
                        estimate_q2, exp3_update, step_size)


def two_step_game(R2, r1=None, seed=0):
    """H=2 turn-based game; max acts at stage 1, min at stage 2."""
    game = gen_turn_based(2, [1, len(R2), 1], 3, np.shape(R2)[1], seed=seed)
    game.reward[1] = np.asarray(R2, dtype=float)[:, None, :]
    if r1 is not None:
        game.reward[0] = np.asarray(r1, dtype=float)[None, :, None]
    return game


# -- estimators --------------------------------------------------------------------


def test_one_step_examples():
    assert np.array_equal(estimate_one_step(1, 1.0, 0.3, 3).values, [1, 1, 1])
    est = estimate_one_step(0, 0.0, 0.5, 3)
    assert np.array_equal(est.values, [-1, 1, 1]) and est.bound == 1.0


def test_q1_examples():
    assert np.array_equal(estimate_q1(2, 2.0, 0.1, 3).values, [2, 2, 2])
    est = estimate_q1(1, 0.0, 0.25, 3)
    assert np.array_equal(est.values, [2, -6, 2]) and est.bound == 2.0


def test_q2_examples():
    assert np.array_equal(estimate_q2(0, 1.0, 0.2, 2).values, [1, 1])
    assert np.array_equal(estimate_q2(1, 0.0, 0.5, 2).values, [1, -1])


def test_zero_probability_rejected():
    with pytest.raises(ValueError):
        estimate_one_step(0, 0.5, 0.0, 2)


@settings(max_examples=200)
@given(A=st.integers(1, 6), data=st.data(), r=st.floats(0, 1), p=st.floats(1e-6, 1))
def test_caps_and_unplayed_entries(A, data, r, p):
    a = data.draw(st.integers(0, A - 1))
    for est, cap in ((estimate_one_step(a, r, p, A), 1.0), (estimate_q1(a, 2 * r, p, A), 2.0),
                     (estimate_q2(a, r, p, A), 1.0)):
        assert np.all(est.values <= cap)
        assert np.all(np.delete(est.values, a) == cap)


def test_one_step_unbiased():
    R = np.array([[0.1, 0.8, 0.4], [0.9, 0.2, 0.5], [0.3, 0.6, 0.7]])
    mu, nu = np.array([0.2, 0.5, 0.3]), np.array([0.6, 0.1, 0.3])
    rng = np.random.default_rng(0)
    n = 100_000
    a = rng.choice(3, size=n, p=mu)
    b = rng.choice(3, size=n, p=nu)
    est = estimate_one_step(a, R[a, b], mu[a], 3).values
    se = est.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - R @ nu) <= 3 * se)


def test_q1_unbiased_against_exact_values():
    game = two_step_game([[0.2, 0.9], [0.7, 0.4], [0.5, 0.5]], r1=[0.3, 0.6, 0.1])
    mu = np.array([0.5, 0.3, 0.2])
    nu = np.array([[0.4, 0.6], [0.8, 0.2], [0.5, 0.5]])
    # exact Q1(a) = r1(a) + sum_s2 P(s2|a) (R2 nu)(s2)
    stage2 = (game.reward[1][:, 0, :] * nu).sum(axis=1)
    Q1 = game.reward[0][0, :, 0] + game.transition[0][0, :, 0] @ stage2
    rng = np.random.default_rng(1)
    n = 100_000
    a = rng.choice(3, size=n, p=mu)
    cdf = np.cumsum(game.transition[0][0, a, 0], axis=1)
    s2 = (rng.random(n)[:, None] > cdf).sum(axis=1)
    b = (rng.random(n)[:, None] > np.cumsum(nu[s2], axis=1)).sum(axis=1)
    total = game.reward[0][0, a, 0] + game.reward[1][s2, 0, b]
    est = estimate_q1(a, total, mu[a], 3).values
    se = est.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - Q1) <= 3 * se)


def test_q2_unbiased():
    r = np.array([0.25, 0.75, 0.5])
    nu = np.array([0.2, 0.3, 0.5])
    rng = np.random.default_rng(2)
    n = 100_000
    b = rng.choice(3, size=n, p=nu)
    est = estimate_q2(b, r[b], nu[b], 3).values
    se = est.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - r) <= 3 * se)


def test_second_moment_bound():
    rng = np.random.default_rng(3)
    A, n = 4, 100_000
    mu = rng.dirichlet(np.ones(A))
    a = rng.choice(A, size=n, p=mu)
    r = rng.random(n)
    for est, cap in ((estimate_one_step(a, r, mu[a], A).values, 1.0),
                     (estimate_q1(a, 2 * r, mu[a], A).values, 2.0)):
        assert (est ** 2 @ mu).mean() <= 1.1 * cap ** 2 * A


# -- exp3 update ---------------------------------------------------------------------


def test_equal_estimates_leave_distribution():
    ctx = Exp3Context(3, "max", np.log([0.2, 0.3, 0.5]))
    before = ctx.probs
    exp3_update(ctx, LossEstimate(np.full(3, 0.7), 1.0), 0.4)
    assert np.allclose(ctx.probs, before, atol=1e-12, rtol=0)


def test_zero_step_leaves_distribution():
    ctx = Exp3Context(2, "min")
    exp3_update(ctx, np.array([1.0, -5.0]), 0.0)
    assert np.allclose(ctx.probs, 0.5, atol=1e-12, rtol=0)


def test_closed_form_two_action_update():
    ctx = Exp3Context(2, "max")
    exp3_update(ctx, np.array([1.0, -1.0]), 0.5)
    expected = np.array([math.exp(0.5), math.exp(-0.5)])
    assert np.allclose(ctx.probs, expected / expected.sum(), atol=1e-15)
    ctx = Exp3Context(2, "min")
    exp3_update(ctx, np.array([1.0, -1.0]), 0.5)
    assert np.allclose(ctx.probs, expected[::-1] / expected.sum(), atol=1e-15)


@settings(max_examples=100)
@given(est=st.lists(st.floats(-50, 2), min_size=3, max_size=3), c=st.floats(-10, 10),
       eta=st.floats(0, 3), role=st.sampled_from(["max", "min"]))
def test_update_is_shift_invariant_and_normalized(est, c, eta, role):
    a, b = Exp3Context(3, role), Exp3Context(3, role)
    exp3_update(a, np.array(est), eta)
    exp3_update(b, np.array(est) + c, eta)
    assert np.allclose(a.probs, b.probs, atol=1e-12, rtol=0)
    assert abs(a.probs.sum() - 1) <= 1e-12 and np.all(np.isfinite(a.log_weights))


def test_update_rejects_bad_inputs():
    ctx = Exp3Context(2)
    with pytest.raises(ValueError):
        exp3_update(ctx, np.array([np.inf, 0.0]), 0.1)
    with pytest.raises(ValueError):
        exp3_update(ctx, np.array([0.0, 0.0, 0.0]), 0.1)
    with pytest.raises(ValueError):
        Exp3Context(2, role="both")


def test_large_estimates_stay_finite():
    ctx = Exp3Context(2, "max")
    for _ in range(1000):
        exp3_update(ctx, np.array([-1e6, 1.0]), 10.0)
    assert np.all(np.isfinite(ctx.probs)) and ctx.probs[1] == 1.0


# -- step sizes ----------------------------------------------------------------------


def test_step_size_examples():
    assert step_size(1, 2) == pytest.approx(math.sqrt(math.log(2) / 2))
    assert step_size(1, 2) == pytest.approx(0.5887, abs=1e-4)
    assert step_size(40, 3) == pytest.approx(step_size(10, 3) / 2)
    assert step_size(5, 1) == 0.0
    assert step_size(1, 4, horizon_total=100) == pytest.approx(math.sqrt(math.log(4) / 400))
    with pytest.raises(ValueError):
        step_size(0, 3)


# -- learners --------------------------------------------------------------------------


def test_one_step_requires_horizon_one():
    with pytest.raises(ValueError):
        MirrorDescentLearner(gen_random_game(2, 1, 2, 2, seed=0), "1step")
    with pytest.raises(ValueError):
        MirrorDescentLearner(gen_random_game(2, [1, 2, 1], 2, 2, seed=0), "2step-tb")
    with pytest.raises(ValueError):
        MirrorDescentLearner(matrix_game([[0.5]]), "3step")


def _seed_average(make, episodes, seeds, pick):
    draws = []
    for seed in range(seeds):
        learner = make()
        rng = np.random.default_rng(seed)
        for k in range(episodes):
            learner.run_episode(rng, k=k)
        draws.append(pick(learner.policies()))
    return np.array(draws)


def _assert_symmetric(draws):
    # exchangeable actions: every coordinate has mean 1/A across seeds
    A = draws.shape[1]
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - 1 / A) <= 3 * se + 1e-12)


def test_constant_reward_is_symmetric_with_zero_weak_regret():
    from mgx.harness import weak_regret

    game = matrix_game(np.full((3, 3), 0.5))
    draws = _seed_average(lambda: MirrorDescentLearner(game), 300, 200, lambda p: p.mu[0][0])
    _assert_symmetric(draws)
    learner = MirrorDescentLearner(game)
    rng = np.random.default_rng(0)
    sums = None
    for k in range(500):
        pair = learner.policies()
        sums = pair if sums is None else type(pair)([sums.mu[0] + pair.mu[0]], [sums.nu[0] + pair.nu[0]])
        learner.run_episode(rng, k=k)
    assert abs(weak_regret(game, sums, 500)) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_dominant_row_concentrates(seed):
    learner = MirrorDescentLearner(matrix_game([[0.9, 0.8], [0.2, 0.1]]))
    rng = np.random.default_rng(seed)
    for k in range(5000):
        learner.run_episode(rng, k=k)
    pair = learner.policies()
    assert pair.mu[0][0, 0] >= 0.9 and pair.nu[0][0, 1] >= 0.9


def test_two_step_min_concentrates_on_dominant_column():
    game = two_step_game([[0.8, 0.1, 0.6]])
    learner = MirrorDescentLearner(game, "2step-tb")
    rng = np.random.default_rng(0)
    for k in range(5000):
        learner.run_episode(rng, k=k)
    assert learner.policies().nu[1][0, 1] >= 0.9


def test_two_step_action_independent_reward_is_symmetric():
    game = two_step_game([[0.3, 0.7]], r1=[0.5, 0.5, 0.5])
    game.transition[0][:] = 1.0
    draws = _seed_average(lambda: MirrorDescentLearner(game, "2step-tb"), 300, 200, lambda p: p.mu[0][0])
    _assert_symmetric(draws)


def test_estimates_respect_caps_during_runs():
    learner = MirrorDescentLearner(gen_random_game(1, 2, 3, 3, seed=1))
    rng = np.random.default_rng(0)
    for k in range(3000):
        rec = learner.run_episode(rng, s1=k % 2, k=k)
        assert np.all(rec.estimate_max <= 1.0) and np.all(rec.estimate_min <= 1.0)
    learner = MirrorDescentLearner(two_step_game([[0.2, 0.9], [0.6, 0.3]]), "2step-tb")
    for k in range(3000):
        rec = learner.run_episode(rng, k=k)
        assert np.all(rec.estimate_max <= 2.0) and np.all(rec.estimate_min <= 1.0)


def test_contexts_are_isolated():
    game = gen_random_game(1, 3, 2, 2, seed=2)
    learner = MirrorDescentLearner(game)
    rng = np.random.default_rng(0)
    for k in range(50):
        learner.run_episode(rng, s1=0, k=k)
    before = [c.log_weights.copy() for c in learner.max_ctx[1:] + learner.min_ctx[1:]]
    for k in range(50):
        learner.run_episode(rng, s1=0, k=k)
    after = [c.log_weights for c in learner.max_ctx[1:] + learner.min_ctx[1:]]
    assert all(np.array_equal(x, y) for x, y in zip(before, after))


def test_two_step_policies_have_game_shapes():
    game = two_step_game([[0.2, 0.9], [0.6, 0.3]])
    pair = MirrorDescentLearner(game, "2step-tb").policies()
    for h in range(2):
        assert pair.mu[h].shape == game.reward[h].shape[:2]
        assert pair.nu[h].shape == (game.reward[h].shape[0], game.reward[h].shape[2])
    assert isinstance(game, MarkovGame)
