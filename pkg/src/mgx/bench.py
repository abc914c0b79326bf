"""Acceptance benchmark cells; each returns a Criterion with a pass flag and a detail line."""
from __future__ import annotations

import contextlib
import io
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import explore
from .game import (MarkovGame, PolicyPair, best_response_max, best_response_min, duality_gap, exact_nash,
                   one_sided_gaps, random_policy)
from .harness import (ExperimentConfig, _add_policies, benchmark_game, gen_random_game, gen_turn_based,
                      run_experiment, weak_regret)
from .matrix import nash_general_sum, nash_zero_sum, support_enumeration
from .mirror import MirrorDescentLearner, estimate_one_step, estimate_q1, estimate_q2
from .ulcb import BonusParams, UlcbLearner, bonus

BENCH_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MGX_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = _workers()
    if n == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _timed(number: int, name: str, fn) -> Criterion:
    t0 = time.perf_counter()
    passed, detail = fn()
    return Criterion(number, name, bool(passed), detail, time.perf_counter() - t0)


def _recheck(P, Q, phi, psi) -> float:
    # independent of matrix.exploitability: explicit loops over pure deviations
    v_max = sum(phi[i] * P[i, j] * psi[j] for i in range(P.shape[0]) for j in range(P.shape[1]))
    v_min = sum(phi[i] * Q[i, j] * psi[j] for i in range(Q.shape[0]) for j in range(Q.shape[1]))
    dev_max = max(sum(P[i, j] * psi[j] for j in range(P.shape[1])) for i in range(P.shape[0]))
    dev_min = min(sum(phi[i] * Q[i, j] for i in range(Q.shape[0])) for j in range(Q.shape[1]))
    return max(dev_max - v_max, v_min - dev_min)


# -- 1, 2: matrix solvers ------------------------------------------------------


def matrix_soundness(n: int = 500, seed: int = 11) -> Criterion:
    def run():
        rng = np.random.default_rng(seed)
        worst_gap = worst_diff = 0.0
        for _ in range(n):
            A, B = rng.integers(2, 5, size=2)
            Q = rng.random((A, B))
            sol = nash_zero_sum(Q, tol=1e-8)
            worst_gap = max(worst_gap, _recheck(Q, Q, sol.phi, sol.psi))
            values = [s.value_max for s in support_enumeration(Q, Q)]
            worst_diff = max(worst_diff, max(abs(v - sol.value_max) for v in values))
        return worst_gap <= 1e-8 and worst_diff <= 1e-6, \
            f"max exploitability {worst_gap:.2e} (<=1e-8), max |v - v_enum| {worst_diff:.2e} (<=1e-6)"

    c = _timed(1, "zero-sum matrix solver soundness", run)
    c.passed &= c.seconds < 10
    return c


def bimatrix_soundness(n: int = 500, seed: int = 12) -> Criterion:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        fallbacks = 0
        for _ in range(n):
            A, B = rng.integers(1, 5, size=2)
            P, Q = rng.random((A, B)), rng.random((A, B))
            sol = nash_general_sum(P, Q, tol=1e-6)
            worst = max(worst, _recheck(P, Q, sol.phi, sol.psi))
            fallbacks += sol.method == "support_enumeration"
        rate = fallbacks / n
        return worst <= 1e-6 and rate < 0.05, f"max exploitability {worst:.2e} (<=1e-6), fallback rate {rate:.1%} (<5%)"

    c = _timed(2, "bimatrix solver soundness", run)
    c.passed &= c.seconds < 30
    return c


# -- 3: exact planning -------------------------------------------------------------


def planning_oracles(n: int = 50, seed: int = 13) -> Criterion:
    def run():
        rng = np.random.default_rng(seed)
        worst_identity = worst_sandwich = 0.0
        for i in range(n):
            H, S = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            A, B = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            game = gen_random_game(H, S, A, B, seed=1000 + i)
            _, star = exact_nash(game, tol=1e-10)
            v_star = star.V[0][0]
            for _ in range(5):
                pair = random_policy(game, rng)
                up = best_response_max(game, pair.nu)[1].V[0][0]
                low = best_response_min(game, pair.mu)[1].V[0][0]
                g_max, g_min = one_sided_gaps(game, pair)
                worst_identity = max(worst_identity, abs((up - low) - (g_max + g_min)))
                worst_sandwich = max(worst_sandwich, low - v_star, v_star - up)
        return worst_identity <= 1e-9 and worst_sandwich <= 1e-9, \
            f"identity residual {worst_identity:.1e}, sandwich violation {worst_sandwich:.1e} (<=1e-9)"

    return _timed(3, "exact-planning oracle equivalence", run)


# -- 4, 5: VI-ULCB -------------------------------------------------------------------


def _audit_seed(seed: int, episodes: int = 2000) -> float:
    cfg = ExperimentConfig("vi-ulcb", episodes=episodes, seed=seed, c=2.0, eval_every=episodes, audit=True)
    log = run_experiment(cfg, benchmark_game())
    return float(np.mean([r.audit_fraction for r in log.records]))


def ulcb_validity(episodes: int = 2000) -> Criterion:
    def run():
        fractions = _map(_audit_seed, BENCH_SEEDS) if episodes == 2000 else \
            [_audit_seed(s, episodes) for s in BENCH_SEEDS]
        mean = float(np.mean(fractions))
        return mean >= 0.999, f"mean audit fraction {mean:.5f} (>=0.999), per seed {np.round(fractions, 5).tolist()}"

    c = _timed(4, "ULCB validity (c=2)", run)
    c.passed &= c.seconds < 120
    return c


def _regret_seed(seed: int, episodes: int = 4000, c: float = 2.0):
    cfg = ExperimentConfig("vi-ulcb", episodes=episodes, seed=seed, c=c, eval_every=1)
    log = run_experiment(cfg, benchmark_game())
    rec = log.records
    width = lambda r: r.v_up_root - r.v_low_root
    return rec[episodes // 4 - 1].cumulative_regret, rec[-1].cumulative_regret, width(rec[99]), width(rec[-1])


def ulcb_sublinear(episodes: int = 4000, c: float = 2.0) -> Criterion:
    def run():
        rows = _map(_regret_seed, BENCH_SEEDS) if (episodes, c) == (4000, 2.0) else \
            [_regret_seed(s, episodes, c) for s in BENCH_SEEDS]
        ratios = [end / (4 * quarter) for quarter, end, _, _ in rows]
        shrink = [w_end / w100 if w100 > 0 else 0.0 for _, _, w100, w_end in rows]
        ok_ratio = sum(r < 0.6 for r in ratios) >= 4
        ok_width = all(s < 0.5 for s in shrink)
        return ok_ratio and ok_width, (f"R(K)/(4 R(K/4)) {np.round(ratios, 3).tolist()} (<0.6 on >=4/5), "
                                       f"root width final/ep100 {np.round(shrink, 3).tolist()} (<0.5)")

    return _timed(5, f"VI-ULCB sublinear regret (c={c:g}, K={episodes})", run)


# -- 6: turn-based specialization -----------------------------------------------------


def greedy_turn_based_plan(learner: UlcbLearner, game: MarkovGame) -> list[np.ndarray]:
    """Argmax/argmin backward pass on the learner's data, written without the matrix solver."""
    H = learner.H
    hmax, _ = game.turn_partition
    v_up = np.zeros(learner.sizes[-1])
    v_low = np.zeros(learner.sizes[-1])
    chosen = [None] * H
    for h in reversed(range(H)):
        n = learner.counts[h]
        P = learner.next_counts[h] / np.maximum(n, 1)[..., None]
        beta = bonus(np.maximum(n, 1), learner.params)
        up = np.where(n > 0, np.minimum(learner.r_hat[h] + P @ v_up + beta, H), H)
        low = np.where(n > 0, np.maximum(learner.r_hat[h] + P @ v_low - beta, 0.0), 0.0)
        if h in hmax:
            q_up, q_low = up[:, :, 0], low[:, :, 0]
            idx = np.array([int(np.flatnonzero(row == row.max())[0]) for row in q_up])
        else:
            q_up, q_low = up[:, 0, :], low[:, 0, :]
            idx = np.array([int(np.flatnonzero(row == row.min())[0]) for row in q_low])
        rows = np.arange(len(idx))
        v_up, v_low = q_up[rows, idx], q_low[rows, idx]
        chosen[h] = idx
    return chosen


class _GreedyLearner(UlcbLearner):
    """Single-agent-shaped baseline: same loop, greedy stage policies."""

    def plan(self):
        H = self.H
        mu, nu = [None] * H, [None] * H
        for h in reversed(range(H)):
            n = self.counts[h]
            P = self.p_hat(h)
            beta = bonus(np.maximum(n, 1), self.params)
            self.q_up[h] = np.where(n > 0, np.minimum(self.r_hat[h] + P @ self.v_up[h + 1] + beta, H), H)
            self.q_low[h] = np.where(n > 0, np.maximum(self.r_hat[h] + P @ self.v_low[h + 1] - beta, 0.0), 0.0)
            S, A, B = self.shapes[h]
            mu[h], nu[h] = np.zeros((S, A)), np.zeros((S, B))
            if B == 1:
                i = np.argmax(self.q_up[h][:, :, 0], axis=1)
                mu[h][np.arange(S), i] = 1.0
                nu[h][:, 0] = 1.0
            else:
                i = np.argmin(self.q_low[h][:, 0, :], axis=1)
                mu[h][:, 0] = 1.0
                nu[h][np.arange(S), i] = 1.0
            self.v_up[h] = np.einsum("sa,sab,sb->s", mu[h], self.q_up[h], nu[h])
            self.v_low[h] = np.einsum("sa,sab,sb->s", mu[h], self.q_low[h], nu[h])
        self.policies = PolicyPair(mu, nu)
        return self.policies


def turn_based_equivalence(n_games: int = 20, episodes: int = 300) -> Criterion:
    def run():
        mismatches = 0
        t_ulcb = t_base = 0.0
        for i in range(n_games):
            game = gen_turn_based(4, 3, 3, 3, seed=500 + i)
            params = BonusParams.for_game(game, episodes, c=2.0)
            learner = UlcbLearner(game, params)
            base = _GreedyLearner(game, params)
            rng_a, rng_b = np.random.default_rng(i), np.random.default_rng(i)
            hmax = game.turn_partition[0]
            for _ in range(episodes):
                t0 = time.perf_counter()
                pair = learner.plan()
                t_ulcb += time.perf_counter() - t0
                chosen = greedy_turn_based_plan(learner, game)
                for h in range(game.horizon):
                    pol = pair.mu[h] if h in hmax else pair.nu[h]
                    mismatches += int(np.any(np.argmax(pol, axis=1) != chosen[h]) or np.any(pol.max(axis=1) != 1.0))
                t0 = time.perf_counter()
                learner.run_episode(game, rng_a)
                t_ulcb += time.perf_counter() - t0
                t0 = time.perf_counter()
                base.plan()
                base.run_episode(game, rng_b)
                t_base += time.perf_counter() - t0
        ratio = t_ulcb / t_base
        return mismatches == 0 and ratio <= 2.0, \
            f"{mismatches} action mismatches over {n_games} games, time ratio {ratio:.2f} (<=2)"

    return _timed(6, "turn-based vector-game specialization", run)


# -- 7: VI-Explore ----------------------------------------------------------------------


def _explore_seed(args) -> float:
    seed, n_collect = args
    game = benchmark_game()
    ss = np.random.SeedSequence(seed).spawn(2)
    cfg = explore.ExplorationConfig(n0=500, n_collect=n_collect)
    model, _, _ = explore.reward_free_exploration(game, cfg, np.random.default_rng(ss[0]),
                                                  env_rng=np.random.default_rng(ss[1]))
    return duality_gap(game, explore.plan_and_exploit(model.game))


def vi_explore_pac() -> Criterion:
    def run():
        H = benchmark_game().horizon
        base = _map(_explore_seed, [(s, 20000) for s in BENCH_SEEDS])
        doubled = _map(_explore_seed, [(s, 40000) for s in BENCH_SEEDS])
        ok = all(g <= 0.1 * H for g in base) and np.median(doubled) <= np.median(base) + 1e-12
        return ok, (f"gaps N=20000 {np.round(base, 4).tolist()} (<= {0.1 * H:g}), "
                    f"median {np.median(base):.4f} -> {np.median(doubled):.4f} at N=40000")

    c = _timed(7, "VI-Explore PAC behaviour", run)
    c.passed &= c.seconds < 300
    return c


# -- 8: estimator laws -----------------------------------------------------------------------


def _sample_index(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((u[..., None] > cdf).sum(axis=-1), probs.shape[-1] - 1)


def estimator_laws(seed: int = 18) -> Criterion:
    def run():
        rng = np.random.default_rng(seed)
        notes = []
        ok = True
        # almost-sure caps over 10^6 draws with random policies and rewards
        n = 10 ** 6
        A = 4
        mu = rng.dirichlet(np.full(A, 0.3), size=n)
        mu = np.maximum(mu, 1e-12)
        mu /= mu.sum(axis=1, keepdims=True)
        a = _sample_index(mu, rng.random(n))
        p = mu[np.arange(n), a]
        violations = 0
        for fn, cap, rew in ((estimate_one_step, 1.0, rng.random(n)),
                             (estimate_q1, 2.0, 2 * rng.random(n)),
                             (estimate_q2, 1.0, rng.random(n))):
            est = fn(a, rew, p, A).values
            off = np.arange(A) != a[:, None]
            violations += int((est > cap).sum()) + int((est[off] != cap).sum())
        ok &= violations == 0
        notes.append(f"cap violations {violations}")

        m = 10 ** 5
        # one-step: E[l~(a)] = (R nu)_a
        R = rng.random((3, 3))
        mu1, nu1 = np.array([0.5, 0.3, 0.2]), np.array([0.2, 0.5, 0.3])
        aa, bb = _sample_index(mu1, rng.random(m)), _sample_index(nu1, rng.random(m))
        est = estimate_one_step(aa, R[aa, bb], mu1[aa], 3).values
        ok &= _unbiased(est, R @ nu1, notes, "l~")
        ok &= _second_moment(est, mu1, 1.0, notes, "l~")

        # two-step turn-based: E[Q1~(a)] = r1(a) + sum_s2 P(s2|a) nu(.|s2) . r2(s2, .)
        game = gen_turn_based(2, [1, 3, 1], 3, 3, seed=seed)
        r1, P1 = game.reward[0][0, :, 0], game.transition[0][0, :, 0]
        r2 = game.reward[1][:, 0, :]
        nu2 = rng.dirichlet(np.ones(3), size=3)
        q1_true = r1 + P1 @ (nu2 * r2).sum(axis=1)
        aa = _sample_index(mu1, rng.random(m))
        s2 = _sample_index(P1[aa], rng.random(m))
        bb = _sample_index(nu2[s2], rng.random(m))
        est = estimate_q1(aa, r1[aa] + r2[s2, bb], mu1[aa], 3).values
        ok &= _unbiased(est, q1_true, notes, "Q1~")
        ok &= _second_moment(est, mu1, 2.0, notes, "Q1~")

        # Q2~ at a fixed stage-2 state
        nu = nu2[0]
        bb = _sample_index(nu, rng.random(m))
        est = estimate_q2(bb, r2[0, bb], nu[bb], 3).values
        ok &= _unbiased(est, r2[0], notes, "Q2~")
        ok &= _second_moment(est, nu, 1.0, notes, "Q2~")
        return ok, "; ".join(notes)

    return _timed(8, "loss-estimator laws", run)


def _unbiased(est: np.ndarray, truth: np.ndarray, notes: list, name: str) -> bool:
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / np.sqrt(est.shape[0])
    z = np.abs(mean - truth) / se
    notes.append(f"{name} max |z| {z.max():.2f}")
    return bool(np.all(z <= 3.0))


def _second_moment(est: np.ndarray, probs: np.ndarray, cap: float, notes: list, name: str) -> bool:
    moment = float((est ** 2 @ probs).mean())
    bound = cap ** 2 * probs.size
    notes.append(f"{name} E[sum p est^2] {moment:.3f} <= {1.1 * bound:g}")
    return moment <= 1.1 * bound


# -- 9: mirror-descent weak regret ---------------------------------------------------------------


def _md_seed(args):
    game_seed, seed, T = args
    game = gen_random_game(1, 1, 3, 3, seed=game_seed)
    learner = MirrorDescentLearner(game, "1step")
    rng = np.random.default_rng([game_seed, seed])
    sums, out = None, {}
    for k in range(1, T + 1):
        sums = _add_policies(sums, learner.policies())
        learner.run_episode(rng)
        if k in (T // 4, T):
            out[k] = weak_regret(game, sums, k) / np.sqrt(k)
    return out[T // 4], out[T]


def _dominant_seed(seed: int) -> tuple[float, float]:
    game = gen_random_game(1, 1, 2, 2, seed=0)
    # row 0 dominates for max, column 1 dominates for min
    game.reward[0][0] = np.array([[0.9, 0.8], [0.2, 0.1]])
    learner = MirrorDescentLearner(game, "1step")
    rng = np.random.default_rng(seed)
    for _ in range(5000):
        learner.run_episode(rng)
    pol = learner.policies()
    return float(pol.mu[0][0, 0]), float(pol.nu[0][0, 1])


def mirror_weak_regret(T: int = 20000, game_seeds=(0, 1, 2)) -> Criterion:
    def run():
        notes, ok = [], True
        for gs in game_seeds:
            rows = _map(_md_seed, [(gs, s, T) for s in BENCH_SEEDS])
            quarter = np.mean([q for q, _ in rows])
            full = np.mean([f for _, f in rows])
            ratio = full / quarter
            ok &= 0.5 <= ratio <= 2.0
            notes.append(f"game {gs}: WR/sqrt(T) {quarter:.3f} -> {full:.3f} (x{ratio:.2f}, within 2x)")
        mass = _map(_dominant_seed, BENCH_SEEDS)
        worst = min(min(m) for m in mass)
        ok &= worst >= 0.9
        notes.append(f"min dominant-action mass {worst:.3f} (>=0.9)")
        return ok, "; ".join(notes)

    return _timed(9, "mirror-descent weak regret", run)


# -- 10: determinism and I/O --------------------------------------------------------------------


def determinism_io() -> Criterion:
    from .cli import main

    def pipeline(root: Path) -> dict[str, bytes]:
        g = str(root / "g.json")
        steps = [
            ["gen", "--kind", "random", "--horizon", "3", "--states", "3", "--a", "2", "--b", "2",
             "--seed", "7", "-o", g],
            ["solve", g, "--policy-out", str(root / "nash.json"), "-o", str(root / "values.txt")],
            ["train", g, "--algo", "vi-ulcb", "--episodes", "100", "--seed", "1", "-o", str(root / "run.csv"),
             "--policy-out", str(root / "pol.json"), "--snapshot-out", str(root / "snap.json")],
            ["train", g, "--algo", "vi-explore", "--episodes", "400", "--n0", "10", "--n-collect", "100",
             "--seed", "1", "-o", str(root / "explore.csv"), "--trajectories-out", str(root / "traj.jsonl")],
        ]
        with contextlib.redirect_stdout(io.StringIO()):
            codes = [main(argv) for argv in steps]
        if any(codes):
            raise RuntimeError(f"CLI exit codes {codes}")
        return {p.name: p.read_bytes() for p in sorted(root.iterdir())}

    def run():
        with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
            first, second = pipeline(Path(d1)), pipeline(Path(d2))
            game = MarkovGame.load(Path(d1) / "g.json")
            resaved = Path(d1) / "g2.json"
            game.save(resaved)
            text_same = resaved.read_bytes() == first["g.json"]
        same = first == second
        again = MarkovGame.from_dict(game.to_dict())
        lossless = text_same and all(np.array_equal(x, y) for x, y in zip(game.transition + game.reward,
                                                                          again.transition + again.reward))
        return same and lossless, f"byte-identical outputs {same} ({len(first)} files), lossless JSON {lossless}"

    return _timed(10, "determinism and I/O round trips", run)


ALL = {
    1: matrix_soundness, 2: bimatrix_soundness, 3: planning_oracles, 4: ulcb_validity,
    5: ulcb_sublinear, 6: turn_based_equivalence, 7: vi_explore_pac, 8: estimator_laws,
    9: mirror_weak_regret, 10: determinism_io,
}


def run_all(only=None) -> list[Criterion]:
    return [ALL[i]() for i in sorted(ALL) if only is None or i in only]
