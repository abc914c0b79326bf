"""Game generators, episode orchestration and exact regret accounting."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import explore
from .game import (MarkovGame, PolicyPair, best_response_max, best_response_min, duality_gap,
                   validate_game)
from .mirror import MirrorDescentLearner
from .ulcb import BonusParams, UlcbLearner, ucb_validity_audit

log = logging.getLogger(__name__)

ALGORITHMS = ("vi-ulcb", "vi-explore", "md-1step", "md-2step-tb")
CSV_COLUMNS = ("k", "v_up_root", "v_low_root", "regret_increment", "cumulative_regret", "eval_flag")


def _per_stage(x, n: int, name: str) -> list[int]:
    out = [int(x)] * n if np.ndim(x) == 0 else [int(v) for v in x]
    if len(out) != n or min(out) < 1:
        raise ValueError(f"{name} must be a positive int or a list of {n} positive ints")
    return out


def gen_random_game(horizon: int, states, actions_max, actions_min, seed: int,
                    alpha: float = 1.0, turn_partition=None) -> MarkovGame:
    """Dirichlet(alpha) transition rows and uniform [0, 1] rewards.

    ``states`` is an int (same size at every stage, including the terminal
    stage) or a list of H + 1 sizes.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    sizes = _per_stage(states, horizon + 1, "states")
    A = _per_stage(actions_max, horizon, "actions_max")
    B = _per_stage(actions_min, horizon, "actions_min")
    rng = np.random.default_rng(seed)
    P, r = [], []
    for h in range(horizon):
        shape = (sizes[h], A[h], B[h])
        rows = rng.dirichlet(np.full(sizes[h + 1], alpha), size=shape)
        # the sampler can return 1 - 1e-16 for a single-state stage
        P.append(rows / rows.sum(axis=-1, keepdims=True))
        r.append(rng.random(shape))
    game = MarkovGame(P, r, terminal_states=sizes[-1], turn_partition=turn_partition)
    validate_game(game)
    return game


def gen_turn_based(horizon: int, states, actions_max: int, actions_min: int, seed: int,
                   alternating: bool = True) -> MarkovGame:
    """Random turn-based game; the idle player gets a single dummy action.

    Alternating play gives the max player the odd (1-based) stages; otherwise
    the stages are split at random.
    """
    if alternating:
        hmax = frozenset(range(0, horizon, 2))
    else:
        rng = np.random.default_rng([seed, 1])
        hmax = frozenset(int(h) for h in np.flatnonzero(rng.random(horizon) < 0.5))
    hmin = frozenset(range(horizon)) - hmax
    A = [actions_max if h in hmax else 1 for h in range(horizon)]
    B = [actions_min if h in hmin else 1 for h in range(horizon)]
    return gen_random_game(horizon, states, A, B, seed, turn_partition=(hmax, hmin))


def benchmark_game() -> MarkovGame:
    """Fixed acceptance benchmark: H=3, three states per stage, 2x2 actions."""
    return gen_random_game(3, 3, 2, 2, seed=2024)


# -- experiment configuration and logs -----------------------------------


@dataclass
class ExperimentConfig:
    algorithm: str = "vi-ulcb"
    episodes: int = 100
    seed: int = 0
    c: float = 2.0
    failure_prob: float = 0.1
    n0: int = 50
    n_collect: int = 1000
    eval_every: int = 10
    audit: bool = False
    diagnostics: bool = False

    def validate(self, game: MarkovGame) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.episodes < 1 or self.eval_every < 1:
            raise ValueError("episodes and eval_every must be >= 1")
        if self.algorithm == "md-1step" and game.horizon != 1:
            raise ValueError("md-1step requires a horizon-1 game")
        if self.algorithm == "md-2step-tb":
            tp = game.turn_partition
            if game.horizon != 2 or tp is None or tp[0] != {0}:
                raise ValueError("md-2step-tb requires an H=2 turn-based game with the max player first")
        if self.algorithm == "vi-explore":
            n_exp = self.exploration().episodes(game)
            if n_exp >= self.episodes:
                raise ValueError(f"vi-explore needs more than {n_exp} episodes (exploration budget)")

    def exploration(self) -> explore.ExplorationConfig:
        return explore.ExplorationConfig(n0=self.n0, n_collect=self.n_collect, failure_prob=self.failure_prob)


@dataclass
class RunRecord:
    k: int
    v_up_root: float | None
    v_low_root: float | None
    regret_increment: float
    cumulative_regret: float
    eval_flag: bool
    audit_fraction: float | None = None
    xi: float | None = None
    zeta: float | None = None


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)
    final_policies: PolicyPair | None = None
    policy_sums: PolicyPair | None = None
    exploration_episodes: int = 0
    dataset: list | None = None
    snapshot: dict | None = None
    error: str | None = None

    @property
    def cumulative_regret(self) -> float:
        return self.records[-1].cumulative_regret if self.records else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        fmt = lambda x: "" if x is None else repr(float(x))
        for rec in self.records:
            w.writerow([rec.k, fmt(rec.v_up_root), fmt(rec.v_low_root), fmt(rec.regret_increment),
                        fmt(rec.cumulative_regret), int(rec.eval_flag)])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def read_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _streams(seed: int) -> dict[str, np.random.Generator]:
    # evaluation is exact, so it draws no randomness; its stream is reserved
    env, learner, evaluation = np.random.SeedSequence(seed).spawn(3)
    return {"env": np.random.default_rng(env), "learner": np.random.default_rng(learner),
            "eval": np.random.default_rng(evaluation)}


class _Accountant:
    """Piecewise-constant regret accrual between exact evaluations."""

    def __init__(self, game: MarkovGame, log_: RunLog, eval_every: int, s1: int):
        self.game, self.log, self.eval_every, self.s1 = game, log_, eval_every, s1
        self.current = None
        self.total = 0.0
        self.evals_done = 0

    def record(self, k: int, pair_fn, v_up=None, v_low=None, fixed=None, **extra) -> RunRecord:
        due = fixed is None and self.evals_done % self.eval_every == 0
        if fixed is not None:
            self.current = fixed
        elif due:
            self.current = max(duality_gap(self.game, pair_fn(), self.s1), 0.0)
        if fixed is None:
            self.evals_done += 1
        self.total += self.current
        rec = RunRecord(k, v_up, v_low, self.current, self.total, due, **extra)
        self.log.records.append(rec)
        return rec


def _add_policies(acc: PolicyPair | None, pair: PolicyPair) -> PolicyPair:
    if acc is None:
        return pair.copy()
    for h in range(len(acc.mu)):
        acc.mu[h] += pair.mu[h]
        acc.nu[h] += pair.nu[h]
    return acc


def run_experiment(config: ExperimentConfig, game: MarkovGame, initial_states=None) -> RunLog:
    """Run one learner for ``config.episodes`` episodes against ``game``.

    ``initial_states`` optionally supplies s_1 per episode (default: state 0).
    """
    config.validate(game)
    K = config.episodes
    s1_seq = [0] * K if initial_states is None else [int(s) for s in initial_states]
    if len(s1_seq) < K:
        raise ValueError("initial_states shorter than the number of episodes")
    rng = _streams(config.seed)
    out = RunLog()
    try:
        if config.algorithm == "vi-ulcb":
            _run_ulcb(config, game, s1_seq, rng, out)
        elif config.algorithm == "vi-explore":
            _run_explore(config, game, s1_seq, rng, out)
        else:
            _run_mirror(config, game, s1_seq, rng, out)
    except Exception as exc:  # partial log is kept for the caller to flush
        out.error = f"{type(exc).__name__}: {exc}"
        log.error("run aborted at episode %d: %s", len(out.records) + 1, out.error)
        raise RunAborted(out) from exc
    return out


class RunAborted(RuntimeError):
    def __init__(self, partial: RunLog):
        super().__init__(partial.error)
        self.partial = partial


def _run_ulcb(config, game, s1_seq, rng, out: RunLog) -> None:
    learner = UlcbLearner(game, BonusParams.for_game(game, config.episodes, config.c, config.failure_prob))
    acct = _Accountant(game, out, config.eval_every, s1_seq[0])
    for k in range(1, config.episodes + 1):
        s1 = acct.s1 = s1_seq[k - 1]
        pair = learner.plan()
        extra = {}
        if config.audit:
            extra["audit_fraction"] = ucb_validity_audit(learner, game)
        traj = learner.run_episode(game, rng["learner"], s1, rng["env"])
        if config.diagnostics:
            extra["xi"], extra["zeta"] = learner.xi_zeta(game, traj)
        acct.record(k, lambda: pair, float(learner.v_up[0][s1]), float(learner.v_low[0][s1]), **extra)
    out.final_policies = learner.policies
    out.snapshot = learner.to_dict()


def _run_explore(config, game, s1_seq, rng, out: RunLog) -> None:
    ecfg = config.exploration()
    n_exp = ecfg.episodes(game)
    model, _, data = explore.reward_free_exploration(game, ecfg, rng["learner"], s1_seq[0], rng["env"])
    out.dataset = data
    pair = explore.plan_and_exploit(model.game)
    acct = _Accountant(game, out, config.eval_every, s1_seq[0])
    H = float(game.horizon)
    # exploration episodes are charged the maximal per-episode regret H
    for k in range(1, n_exp + 1):
        acct.record(k, None, fixed=H)
    for k in range(n_exp + 1, config.episodes + 1):
        acct.s1 = s1_seq[k - 1]
        acct.record(k, lambda: pair)
    out.exploration_episodes = n_exp
    out.final_policies = pair


def _run_mirror(config, game, s1_seq, rng, out: RunLog) -> None:
    mode = "1step" if config.algorithm == "md-1step" else "2step-tb"
    learner = MirrorDescentLearner(game, mode)
    acct = _Accountant(game, out, config.eval_every, s1_seq[0])
    sums = None
    for k in range(1, config.episodes + 1):
        acct.s1 = s1_seq[k - 1]
        pair = learner.policies()
        sums = _add_policies(sums, pair)
        acct.record(k, lambda: pair)
        learner.run_episode(rng["learner"], acct.s1, k, rng["env"])
    out.final_policies = learner.policies()
    out.policy_sums = sums


# -- regret summaries ------------------------------------------------------


def weak_regret(game: MarkovGame, policy_sums: PolicyPair, episodes: int, s1: int = 0) -> float:
    """K * [V^{dagger, nu_bar}(s1) - V^{mu_bar, dagger}(s1)] for the average policies.

    Exact whenever the value is linear in each player's per-state policy
    (horizon 1, or two-step turn-based); an upper-bounding surrogate otherwise.
    """
    mu_bar = [m / episodes for m in policy_sums.mu]
    nu_bar = [n / episodes for n in policy_sums.nu]
    _, up = best_response_max(game, nu_bar)
    _, low = best_response_min(game, mu_bar)
    return episodes * float(up.V[0][s1] - low.V[0][s1])


@dataclass
class MixturePolicy:
    """Uniform mixture over one player's stored policies; one member is drawn per episode."""

    members: list[list[np.ndarray]]

    def sample(self, rng: np.random.Generator) -> list[np.ndarray]:
        return self.members[int(rng.integers(len(self.members)))]


def online_to_batch(history: list[PolicyPair]) -> tuple[MixturePolicy, MixturePolicy]:
    """Independent uniform mixtures over the max- and min-player policies of the history."""
    if not history:
        raise ValueError("empty policy history")
    return MixturePolicy([p.mu for p in history]), MixturePolicy([p.nu for p in history])


def mixture_gap(game: MarkovGame, mu_hat: MixturePolicy, nu_hat: MixturePolicy, s1: int = 0) -> float:
    """E[V^{dagger, nu_hat}(s1) - V^{mu_hat, dagger}(s1)] over the mixture draws."""
    up = np.mean([best_response_max(game, nu)[1].V[0][s1] for nu in nu_hat.members])
    low = np.mean([best_response_min(game, mu)[1].V[0][s1] for mu in mu_hat.members])
    return float(up - low)


def write_policy(path: str | Path, pair: PolicyPair) -> None:
    Path(path).write_text(json.dumps(pair.to_dict()) + "\n", encoding="utf-8")


def read_policy(path: str | Path) -> PolicyPair:
    return PolicyPair.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
