import numpy as np
import pytest

from mgx.game import PolicyPair, duality_gap, exact_nash, random_policy, validate_game
from mgx.harness import (CSV_COLUMNS, ExperimentConfig, RunAborted, benchmark_game, gen_random_game,
                         gen_turn_based, mixture_gap, online_to_batch, read_csv, read_policy,
                         run_experiment, weak_regret, write_policy)


# -- generators -----------------------------------------------------------------


def test_single_state_rows_are_forced():
    game = gen_random_game(3, 1, 2, 2, seed=0)
    assert all(np.array_equal(P, np.ones_like(P)) for P in game.transition)


def test_same_seed_same_bytes(tmp_path):
    gen_random_game(3, 3, 2, 2, seed=7).save(tmp_path / "a.json")
    gen_random_game(3, 3, 2, 2, seed=7).save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    gen_random_game(3, 3, 2, 2, seed=8).save(tmp_path / "c.json")
    assert (tmp_path / "a.json").read_bytes() != (tmp_path / "c.json").read_bytes()


def test_dirichlet_row_means():
    game = gen_random_game(1, [2500, 4], 2, 2, seed=3)
    rows = game.transition[0].reshape(-1, 4)
    assert rows.shape[0] == 10_000
    # Dirichlet(1,...,1) over 4 entries: each entry has variance (1/4)(3/4)/5
    se = np.sqrt(0.25 * 0.75 / 5 / rows.shape[0])
    assert np.all(np.abs(rows.mean(axis=0) - 0.25) <= 3 * se)
    r = game.reward[0]
    assert r.min() >= 0 and r.max() <= 1


def test_invalid_dims_rejected():
    with pytest.raises(ValueError):
        gen_random_game(0, 2, 2, 2, seed=0)
    with pytest.raises(ValueError):
        gen_random_game(2, [2, 2], 2, 2, seed=0)
    with pytest.raises(ValueError):
        gen_random_game(2, 2, 0, 2, seed=0)


def test_alternating_turn_based_shapes():
    game = gen_turn_based(2, 3, 4, 5, seed=0)
    assert game.actions_max_per_stage == [4, 1]
    assert game.actions_min_per_stage == [1, 5]
    validate_game(game)


def test_random_split_turn_based_is_valid():
    for seed in range(10):
        game = gen_turn_based(5, 2, 3, 3, seed=seed, alternating=False)
        hmax, hmin = game.turn_partition
        assert hmax | hmin == set(range(5)) and not hmax & hmin
        validate_game(game)


def test_turn_based_games_have_pure_nash():
    for seed in range(10):
        pair, _ = exact_nash(gen_turn_based(3, 3, 3, 3, seed=seed))
        assert all(np.all(p.max(axis=1) == 1.0) for p in pair.mu + pair.nu)


def test_benchmark_game_is_fixed():
    g = benchmark_game()
    assert g.horizon == 3 and g.states_per_stage == [3, 3, 3, 3]
    assert g.actions_max_per_stage == [2, 2, 2] and g.actions_min_per_stage == [2, 2, 2]
    assert np.array_equal(g.reward[0], benchmark_game().reward[0])


# -- config ---------------------------------------------------------------------------


def test_config_validation():
    game = benchmark_game()
    with pytest.raises(ValueError):
        ExperimentConfig(episodes=0).validate(game)
    with pytest.raises(ValueError):
        ExperimentConfig(eval_every=0).validate(game)
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="md-1step").validate(game)
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="md-2step-tb").validate(game)
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="ppo").validate(game)
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="vi-explore", episodes=10).validate(game)


# -- run_experiment -----------------------------------------------------------------


@pytest.mark.parametrize("algo,game", [
    ("vi-ulcb", benchmark_game()),
    ("md-1step", gen_random_game(1, 2, 3, 3, seed=1)),
    ("md-2step-tb", gen_turn_based(2, [1, 3, 1], 3, 3, seed=2)),
])
def test_single_episode_run(algo, game):
    log = run_experiment(ExperimentConfig(algorithm=algo, episodes=1), game)
    assert len(log.records) == 1
    rec = log.records[0]
    assert rec.cumulative_regret == rec.regret_increment
    assert 0 <= rec.regret_increment <= game.horizon
    assert rec.eval_flag


def test_log_invariants_and_determinism():
    game = benchmark_game()
    cfg = ExperimentConfig(episodes=120, seed=3, eval_every=7)
    a, b = run_experiment(cfg, game), run_experiment(cfg, game)
    assert a.to_csv() == b.to_csv()
    ks = [r.k for r in a.records]
    assert ks == list(range(1, 121))
    cum = np.array([r.cumulative_regret for r in a.records])
    inc = np.array([r.regret_increment for r in a.records])
    assert np.all(np.diff(cum) >= 0)
    assert np.all(inc >= -1e-9) and np.all(inc <= 3)
    assert np.allclose(np.cumsum(inc), cum)
    assert [r.k for r in a.records if r.eval_flag] == list(range(1, 121, 7))


def test_eval_cadence_does_not_change_shared_evaluations():
    game = benchmark_game()
    fine = run_experiment(ExperimentConfig(episodes=60, seed=1, eval_every=1), game)
    coarse = run_experiment(ExperimentConfig(episodes=60, seed=1, eval_every=6), game)
    for rf, rc in zip(fine.records, coarse.records):
        if rc.eval_flag:
            assert rf.regret_increment == rc.regret_increment
        assert rf.v_up_root == rc.v_up_root


def test_increments_are_exact_gaps_of_deployed_pairs():
    from mgx.ulcb import BonusParams, UlcbLearner

    game = gen_random_game(2, 2, 2, 2, seed=4)
    cfg = ExperimentConfig(episodes=30, seed=5, eval_every=1, c=0.3)
    log = run_experiment(cfg, game)
    # replay with the same named streams
    env, learner_ss, _ = np.random.SeedSequence(5).spawn(3)
    rng_env, rng_learn = np.random.default_rng(env), np.random.default_rng(learner_ss)
    learner = UlcbLearner(game, BonusParams.for_game(game, 30, c=0.3))
    for rec in log.records:
        pair = learner.plan()
        assert rec.regret_increment == pytest.approx(max(duality_gap(game, pair), 0.0), abs=1e-12)
        learner.run_episode(game, rng_learn, 0, rng_env)


def test_explore_exploit_accounting():
    game = gen_random_game(2, 2, 2, 2, seed=6)
    cfg = ExperimentConfig(algorithm="vi-explore", episodes=400, n0=20, n_collect=200, eval_every=25)
    log = run_experiment(cfg, game)
    k_exp = log.exploration_episodes
    assert k_exp == 20 * 4 + 200
    exploit = log.records[k_exp:]
    assert len({r.regret_increment for r in exploit}) == 1
    gap = duality_gap(game, log.final_policies)
    assert exploit[0].regret_increment == pytest.approx(max(gap, 0.0), abs=1e-9)
    assert log.cumulative_regret == pytest.approx(k_exp * 2 + (400 - k_exp) * exploit[0].regret_increment)
    assert log.dataset is not None and len(log.dataset) == 200


def test_initial_state_hook():
    game = gen_random_game(2, 3, 2, 2, seed=1)
    s1 = [k % 3 for k in range(9)]
    log = run_experiment(ExperimentConfig(episodes=9, eval_every=1), game, initial_states=s1)
    assert [r.v_up_root for r in log.records][:1] == [2.0]
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(episodes=9), game, initial_states=[0, 1])


def test_weak_regret_below_regret():
    for algo, game in (("md-1step", gen_random_game(1, 1, 3, 3, seed=3)),
                       ("md-2step-tb", gen_turn_based(2, [1, 2, 1], 3, 3, seed=4))):
        log = run_experiment(ExperimentConfig(algorithm=algo, episodes=300, eval_every=1), game)
        wr = weak_regret(game, log.policy_sums, 300)
        assert wr <= log.cumulative_regret + 1e-9


def test_aborted_run_keeps_partial_log(monkeypatch):
    import mgx.harness as hz

    calls = {"n": 0}
    real = hz.UlcbLearner.plan

    def flaky(self):
        calls["n"] += 1
        if calls["n"] == 4:
            raise FloatingPointError("boom")
        return real(self)

    monkeypatch.setattr(hz.UlcbLearner, "plan", flaky)
    with pytest.raises(RunAborted) as info:
        run_experiment(ExperimentConfig(episodes=10), benchmark_game())
    assert len(info.value.partial.records) == 3
    assert "boom" in info.value.partial.error


# -- CSV / policy files ----------------------------------------------------------------


def test_csv_format(tmp_path):
    game = gen_random_game(1, 1, 2, 2, seed=0)
    log = run_experiment(ExperimentConfig(algorithm="md-1step", episodes=5), game)
    path = tmp_path / "run.csv"
    log.write_csv(path)
    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_csv(path)
    assert len(rows) == 5 and rows[0]["v_up_root"] == "" and rows[0]["eval_flag"] == "1"
    assert float(rows[-1]["cumulative_regret"]) == log.cumulative_regret


def test_policy_file_round_trip(tmp_path):
    game = benchmark_game()
    pair = random_policy(game, np.random.default_rng(0))
    write_policy(tmp_path / "p.json", pair)
    again = read_policy(tmp_path / "p.json")
    assert all(np.array_equal(x, y) for x, y in zip(pair.mu + pair.nu, again.mu + again.nu))


# -- online to batch -----------------------------------------------------------------


def test_single_pair_history():
    game = benchmark_game()
    pair = random_policy(game, np.random.default_rng(1))
    mu_hat, nu_hat = online_to_batch([pair])
    assert mu_hat.sample(np.random.default_rng(0)) is pair.mu
    assert nu_hat.sample(np.random.default_rng(0)) is pair.nu


def test_nash_copies_have_no_gap():
    game = benchmark_game()
    pair, _ = exact_nash(game, tol=1e-10)
    mu_hat, nu_hat = online_to_batch([pair] * 5)
    assert mixture_gap(game, mu_hat, nu_hat) <= 1e-10 * 3


def test_mixture_gap_is_mean_of_gaps():
    game = gen_random_game(3, 3, 2, 2, seed=12)
    rng = np.random.default_rng(3)
    history = [random_policy(game, rng) for _ in range(10)]
    mu_hat, nu_hat = online_to_batch(history)
    mean_gap = np.mean([duality_gap(game, p) for p in history])
    assert mixture_gap(game, mu_hat, nu_hat) == pytest.approx(mean_gap, abs=1e-9)
    # Monte-Carlo check of the mixture semantics: draw each player's member independently
    draws = [duality_gap(game, PolicyPair(mu_hat.sample(rng), nu_hat.sample(rng))) for _ in range(4000)]
    assert abs(np.mean(draws) - mean_gap) <= 3 * np.std(draws) / np.sqrt(len(draws))


def test_empty_history_rejected():
    with pytest.raises(ValueError):
        online_to_batch([])
