"""Exponential-weights (mirror descent) learners for horizon-1 and two-step turn-based games."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .game import MarkovGame, PolicyPair
from .ulcb import sample


@dataclass
class LossEstimate:
    values: np.ndarray
    bound: float


def _importance_estimate(played, outcome, prob, n: int, cap: float) -> np.ndarray:
    """cap - 1[a = played] / prob * (cap - outcome); batched over leading axes."""
    played = np.asarray(played)
    outcome = np.asarray(outcome, dtype=float)
    prob = np.asarray(prob, dtype=float)
    if np.any(prob <= 0):
        raise ValueError("probability of the played action must be positive")
    hit = np.arange(n) == played[..., None]
    return cap - hit * ((cap - outcome) / prob)[..., None]


def estimate_one_step(a_played, r_observed, mu_prob_of_played, A: int) -> LossEstimate:
    """Unbiased estimate of the row payoffs (R nu)_a from one bandit observation."""
    return LossEstimate(_importance_estimate(a_played, r_observed, mu_prob_of_played, A, 1.0), 1.0)


def estimate_q1(a_played, r_total, mu_prob_of_played, A: int) -> LossEstimate:
    """Estimate of the stage-1 action values from the two-step return r1 + r2 (cap 2)."""
    return LossEstimate(_importance_estimate(a_played, r_total, mu_prob_of_played, A, 2.0), 2.0)


def estimate_q2(b_played, r2, nu_prob_of_played, B: int) -> LossEstimate:
    """Estimate of the stage-2 rewards r(s2, b) for the min player (cap 1)."""
    return LossEstimate(_importance_estimate(b_played, r2, nu_prob_of_played, B, 1.0), 1.0)


def step_size(n_visits: int, action_count: int, horizon_total: int | None = None) -> float:
    """sqrt(log A / (A N)); with ``horizon_total`` the fixed schedule sqrt(log A / (A T))."""
    if action_count < 2:
        return 0.0
    n = n_visits if horizon_total is None else horizon_total
    if n < 1:
        raise ValueError("visit count must be >= 1")
    return math.sqrt(math.log(action_count) / (action_count * n))


@dataclass
class Exp3Context:
    action_count: int
    role: str = "max"
    log_weights: np.ndarray = None
    visits: int = 0

    def __post_init__(self):
        if self.role not in ("max", "min"):
            raise ValueError(f"role must be 'max' or 'min', got {self.role!r}")
        if self.log_weights is None:
            self.log_weights = np.zeros(self.action_count)

    @property
    def probs(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()


def exp3_update(ctx: Exp3Context, estimate, eta: float) -> None:
    """Multiply weights by exp(+eta * est) for the max role, exp(-eta * est) for min."""
    values = estimate.values if isinstance(estimate, LossEstimate) else np.asarray(estimate, dtype=float)
    if eta < 0:
        raise ValueError("step size must be non-negative")
    if values.shape != (ctx.action_count,) or not np.all(np.isfinite(values)):
        raise ValueError("estimate must be a finite vector over the context's actions")
    sign = 1.0 if ctx.role == "max" else -1.0
    logw = ctx.log_weights + sign * eta * values
    ctx.log_weights = logw - logw.max()


@dataclass
class MirrorRecord:
    k: int
    s1: int
    a: int
    b: int
    reward: float
    estimate_max: np.ndarray = field(repr=False)
    estimate_min: np.ndarray = field(repr=False)


class MirrorDescentLearner:
    """Per-context exponential weights; contexts are (stage, state) for the acting player.

    ``mode`` is ``"1step"`` (simultaneous, H = 1) or ``"2step-tb"`` (max acts at
    stage 1, min at stage 2).
    """

    def __init__(self, game: MarkovGame, mode: str = "1step", fixed_total: int | None = None):
        if mode == "1step":
            if game.horizon != 1:
                raise ValueError(f"one-step mirror descent needs horizon 1, got {game.horizon}")
        elif mode == "2step-tb":
            tp = game.turn_partition
            if game.horizon != 2 or tp is None or tp[0] != {0} or tp[1] != {1}:
                raise ValueError("two-step learner needs a turn-based H=2 game with max at stage 1, min at stage 2")
        else:
            raise ValueError(f"unknown mode {mode!r}")
        self.game = game
        self.mode = mode
        self.fixed_total = fixed_total
        S1, A1, B1 = game.reward[0].shape
        self.max_ctx = [Exp3Context(A1, "max") for _ in range(S1)]
        if mode == "1step":
            self.min_ctx = [Exp3Context(B1, "min") for _ in range(S1)]
        else:
            S2, _, B2 = game.reward[1].shape
            self.min_ctx = [Exp3Context(B2, "min") for _ in range(S2)]

    def policies(self) -> PolicyPair:
        g = self.game
        mu1 = np.array([c.probs for c in self.max_ctx])
        if self.mode == "1step":
            return PolicyPair([mu1], [np.array([c.probs for c in self.min_ctx])])
        S2 = g.reward[1].shape[0]
        return PolicyPair([mu1, np.ones((S2, 1))],
                          [np.ones((g.reward[0].shape[0], 1)), np.array([c.probs for c in self.min_ctx])])

    def _eta(self, ctx: Exp3Context) -> float:
        return step_size(ctx.visits, ctx.action_count, self.fixed_total)

    def run_episode(self, rng: np.random.Generator, s1: int = 0, k: int = 0,
                    env_rng: np.random.Generator | None = None) -> MirrorRecord:
        g = self.game
        env_rng = rng if env_rng is None else env_rng
        cmax = self.max_ctx[s1]
        mu = cmax.probs
        a = sample(mu, rng)
        if self.mode == "1step":
            cmin = self.min_ctx[s1]
            nu = cmin.probs
            b = sample(nu, rng)
            r, _ = g.step(0, s1, a, b, env_rng)
            est_max = estimate_one_step(a, r, mu[a], cmax.action_count)
            # min player: gain estimate for 1 - r, turned into a loss by 1 - gain (unbiased for r)
            est_min = estimate_one_step(b, 1.0 - r, nu[b], cmin.action_count)
            loss_min = 1.0 - est_min.values
            total = r
        else:
            r1, s2 = g.step(0, s1, a, 0, env_rng)
            cmin = self.min_ctx[s2]
            nu = cmin.probs
            b = sample(nu, rng)
            r2, _ = g.step(1, s2, 0, b, env_rng)
            est_max = estimate_q1(a, r1 + r2, mu[a], cmax.action_count)
            est_min = estimate_q2(b, r2, nu[b], cmin.action_count)
            loss_min = est_min.values
            total = r1 + r2
        cmax.visits += 1
        cmin.visits += 1
        exp3_update(cmax, est_max, self._eta(cmax))
        exp3_update(cmin, loss_min, self._eta(cmin))
        return MirrorRecord(k, s1, a, b, total, est_max.values, est_min.values)
