"""Self-play value iteration with upper and lower confidence bounds (VI-ULCB)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .game import MarkovGame, PolicyPair, best_response_max, best_response_min
from .matrix import nash_general_sum


@dataclass
class BonusParams:
    horizon: int
    state_bound: int
    c: float = 2.0
    iota: float = 1.0
    failure_prob: float = 0.1
    total_steps: int = 1

    def __post_init__(self):
        if self.c <= 0 or self.iota <= 0:
            raise ValueError("bonus constant and log factor must be positive")

    @classmethod
    def for_game(cls, game: MarkovGame, episodes: int, c: float = 2.0, failure_prob: float = 0.1):
        """iota = log(S A B T / p) with T = H K."""
        S = game.max_states
        A = max(game.actions_max_per_stage)
        B = max(game.actions_min_per_stage)
        T = game.horizon * episodes
        return cls(game.horizon, S, c, math.log(S * A * B * T / failure_prob), failure_prob, T)


def bonus(t, params: BonusParams):
    """c * sqrt(H^2 S iota / t); accepts scalars or count arrays (t >= 1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("bonus is defined for visit counts t >= 1")
    out = params.c * np.sqrt(params.horizon ** 2 * params.state_bound * params.iota / t)
    return float(out) if out.ndim == 0 else out


class UlcbLearner:
    """Counts, empirical model, confidence tables and current policies."""

    def __init__(self, game_dims: MarkovGame, params: BonusParams, nash_tol: float | None = None):
        self.shapes = [r.shape for r in game_dims.reward]
        self.sizes = game_dims.states_per_stage
        self.H = game_dims.horizon
        self.params = params
        self.nash_tol = 1e-6 * self.H if nash_tol is None else nash_tol
        self.counts = [np.zeros(sh, dtype=np.int64) for sh in self.shapes]
        self.next_counts = [np.zeros(sh + (self.sizes[h + 1],), dtype=np.int64)
                            for h, sh in enumerate(self.shapes)]
        self.r_hat = [np.zeros(sh) for sh in self.shapes]
        self.q_up = [np.full(sh, float(self.H)) for sh in self.shapes]
        self.q_low = [np.zeros(sh) for sh in self.shapes]
        self.v_up = [np.full(n, float(self.H)) for n in self.sizes[:-1]] + [np.zeros(self.sizes[-1])]
        self.v_low = [np.zeros(n) for n in self.sizes]
        self.policies: PolicyPair | None = None
        self.episode = 0

    def p_hat(self, h: int) -> np.ndarray:
        n = np.maximum(self.counts[h], 1)[..., None]
        return self.next_counts[h] / n

    def plan(self) -> PolicyPair:
        H = self.H
        mu, nu = [None] * H, [None] * H
        for h in reversed(range(H)):
            t = self.counts[h]
            visited = t > 0
            beta = bonus(np.maximum(t, 1), self.params)
            P = self.p_hat(h)
            up = np.minimum(self.r_hat[h] + P @ self.v_up[h + 1] + beta, H)
            low = np.maximum(self.r_hat[h] + P @ self.v_low[h + 1] - beta, 0.0)
            self.q_up[h] = np.where(visited, up, float(H))
            self.q_low[h] = np.where(visited, low, 0.0)
            mu[h], nu[h] = self._stage_policies(h)
            self.v_up[h] = np.einsum("sa,sab,sb->s", mu[h], self.q_up[h], nu[h])
            self.v_low[h] = np.einsum("sa,sab,sb->s", mu[h], self.q_low[h], nu[h])
        self.policies = PolicyPair(mu, nu)
        return self.policies

    def _stage_policies(self, h: int):
        S, A, B = self.shapes[h]
        mu, nu = np.zeros((S, A)), np.zeros((S, B))
        if A == 1 or B == 1:
            # vector games: the equilibrium is the greedy vertex (lowest index on ties)
            if B == 1:
                col = self.q_up[h][:, :, 0]
                mu[np.arange(S), np.argmax(col >= col.max(axis=1, keepdims=True), axis=1)] = 1.0
                nu[:, 0] = 1.0
            else:
                row = self.q_low[h][:, 0, :]
                mu[:, 0] = 1.0
                nu[np.arange(S), np.argmax(row <= row.min(axis=1, keepdims=True), axis=1)] = 1.0
            return mu, nu
        for s in range(S):
            sol = nash_general_sum(self.q_up[h][s], self.q_low[h][s], tol=self.nash_tol)
            mu[s], nu[s] = sol.phi, sol.psi
        return mu, nu

    def act(self, h: int, s: int, rng: np.random.Generator) -> tuple[int, int]:
        if self.policies is None:
            raise RuntimeError("act() called before plan()")
        return sample(self.policies.mu[h][s], rng), sample(self.policies.nu[h][s], rng)

    def update(self, h: int, s: int, a: int, b: int, r: float, s_next: int) -> None:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"reward {r} outside [0, 1]")
        if not 0 <= s_next < self.sizes[h + 1]:
            raise IndexError(f"next state {s_next} out of range for stage {h + 2}")
        self.counts[h][s, a, b] += 1
        self.next_counts[h][s, a, b, s_next] += 1
        self.r_hat[h][s, a, b] = r

    def run_episode(self, game: MarkovGame, rng: np.random.Generator, s1: int = 0,
                    env_rng: np.random.Generator | None = None) -> list[tuple]:
        """Play one episode with the planned policies; returns the trajectory.

        ``env_rng`` drives the environment's transitions (defaults to ``rng``).
        """
        env_rng = rng if env_rng is None else env_rng
        s = s1
        traj = []
        for h in range(self.H):
            a, b = self.act(h, s, rng)
            r, s_next = game.step(h, s, a, b, env_rng)
            self.update(h, s, a, b, r, s_next)
            traj.append((s, a, b, r, s_next))
            s = s_next
        self.episode += 1
        return traj

    # -- diagnostics -----------------------------------------------------

    def xi_zeta(self, game: MarkovGame, traj: list[tuple]) -> tuple[float, float]:
        """Sum over the episode of the two martingale-difference terms of the regret bound."""
        xi = zeta = 0.0
        mu, nu = self.policies.mu, self.policies.nu
        for h, (s, a, b, _, s_next) in enumerate(traj):
            width = self.q_up[h][s] - self.q_low[h][s]
            xi += mu[h][s] @ width @ nu[h][s] - width[a, b]
            vw = self.v_up[h + 1] - self.v_low[h + 1]
            zeta += game.transition[h][s, a, b] @ vw - vw[s_next]
        return xi, zeta

    # -- snapshots -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "params": vars(self.params).copy(),
            "nash_tol": self.nash_tol,
            "states_per_stage": list(self.sizes),
            "shapes": [list(sh) for sh in self.shapes],
            "counts": [c.tolist() for c in self.counts],
            "next_counts": [c.tolist() for c in self.next_counts],
            "r_hat": [r.tolist() for r in self.r_hat],
            "policies": None if self.policies is None else self.policies.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UlcbLearner":
        self = cls.__new__(cls)
        self.shapes = [tuple(sh) for sh in d["shapes"]]
        self.sizes = list(d["states_per_stage"])
        self.H = len(self.shapes)
        self.params = BonusParams(**d["params"])
        self.nash_tol = d["nash_tol"]
        self.counts = [np.asarray(c, dtype=np.int64) for c in d["counts"]]
        self.next_counts = [np.asarray(c, dtype=np.int64) for c in d["next_counts"]]
        self.r_hat = [np.asarray(r, dtype=float) for r in d["r_hat"]]
        self.q_up = [np.full(sh, float(self.H)) for sh in self.shapes]
        self.q_low = [np.zeros(sh) for sh in self.shapes]
        self.v_up = [np.full(n, float(self.H)) for n in self.sizes[:-1]] + [np.zeros(self.sizes[-1])]
        self.v_low = [np.zeros(n) for n in self.sizes]
        self.episode = d["episode"]
        self.policies = None
        if d.get("policies") is not None:
            self.plan()
        return self


def sample(p: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, p.size - 1)


def ucb_validity_audit(learner: UlcbLearner, game: MarkovGame, slack: float = 1e-9) -> float:
    """Fraction of (h, s, a, b) where Q_up >= sup_mu Q^{mu,nu} and Q_low <= inf_nu Q^{mu,nu}."""
    if learner.policies is None:
        raise RuntimeError("audit requires planned policies")
    if [r.shape for r in game.reward] != learner.shapes:
        raise ValueError("learner and game dimensions differ")
    _, up = best_response_max(game, learner.policies.nu)
    _, low = best_response_min(game, learner.policies.mu)
    ok = total = 0
    for h in range(learner.H):
        good = (learner.q_up[h] >= up.Q[h] - slack) & (learner.q_low[h] <= low.Q[h] + slack)
        ok += int(good.sum())
        total += good.size
    return ok / total
