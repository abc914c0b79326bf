"""Explore-then-exploit: reward-free exploration followed by empirical Nash planning.

During exploration the two players are treated as a single agent acting on
the joint action ``c = a * B_h + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import MarkovGame, PolicyPair, exact_nash
from .ulcb import sample


@dataclass
class ExplorationConfig:
    n0: int = 100
    n_collect: int = 2000
    epsilon: float = 0.1
    failure_prob: float = 0.1
    reach_c: float = 0.1

    def validate(self, horizon: int) -> None:
        if self.n0 < 1 or self.n_collect < 0:
            raise ValueError("n0 must be >= 1 and n_collect >= 0")
        if not 0 < self.epsilon <= horizon:
            raise ValueError(f"epsilon must lie in (0, {horizon}]")
        if not 0 < self.failure_prob < 1:
            raise ValueError("failure_prob must lie in (0, 1)")

    def episodes(self, game: MarkovGame) -> int:
        """Total exploration episodes: one n0 block per (s, h) target plus collection."""
        return self.n0 * sum(game.states_per_stage[:-1]) + self.n_collect


# a joint policy: one (S_h, A_h * B_h) distribution per stage
JointPolicy = list


@dataclass
class PolicyCover:
    policies: list[JointPolicy] = field(default_factory=list)
    targets: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.policies)


@dataclass
class Trajectory:
    states: list[int]
    actions: list[tuple[int, int]]
    rewards: list[float]

    def to_dict(self) -> dict:
        return {"s": self.states, "a": [a for a, _ in self.actions],
                "b": [b for _, b in self.actions], "r": self.rewards}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(list(d["s"]), list(zip(d["a"], d["b"])), list(d["r"]))


def play_joint(game: MarkovGame, policy: JointPolicy, rng: np.random.Generator, s1: int = 0,
               env_rng: np.random.Generator | None = None) -> Trajectory:
    env_rng = rng if env_rng is None else env_rng
    s = s1
    states, actions, rewards = [s], [], []
    for h in range(game.horizon):
        B = game.reward[h].shape[2]
        a, b = divmod(sample(policy[h][s], rng), B)
        r, s = game.step(h, s, a, b, env_rng)
        states.append(s)
        actions.append((a, b))
        rewards.append(r)
    return Trajectory(states, actions, rewards)


def reachability_learner(env: MarkovGame, target: tuple[int, int], n0: int, rng: np.random.Generator,
                         c: float = 0.1, failure_prob: float = 0.1, s1: int = 0,
                         env_rng: np.random.Generator | None = None) -> list[JointPolicy]:
    """Optimistic single-agent value iteration on the indicator reward 1[s_h = s*, h = h*].

    ``target`` is ``(s*, h*)`` with a 0-based stage. Returns the greedy policy of
    every episode, each made uniform over joint actions at stage h*.
    """
    s_star, h_star = target
    if not 0 <= h_star < env.horizon or not 0 <= s_star < env.states_per_stage[h_star]:
        raise ValueError(f"invalid target {target}")
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    H = env.horizon
    sizes = env.states_per_stage
    C = [r.shape[1] * r.shape[2] for r in env.reward]
    counts = [np.zeros((sizes[h], C[h]), dtype=np.int64) for h in range(H)]
    next_counts = [np.zeros((sizes[h], C[h], sizes[h + 1]), dtype=np.int64) for h in range(H)]
    iota = math.log(max(sizes) * max(C) * H * n0 / failure_prob)

    uniform = [np.full((sizes[h], C[h]), 1.0 / C[h]) for h in range(H)]
    reach_value = np.zeros(sizes[h_star])
    reach_value[s_star] = 1.0
    out = []
    for _ in range(n0):
        policy = [u.copy() for u in uniform]
        V = reach_value
        for h in reversed(range(h_star)):
            n = counts[h]
            P = next_counts[h] / np.maximum(n, 1)[..., None]
            # value range of the indicator objective is 1
            q = P @ V + c * np.sqrt(max(sizes) * iota / np.maximum(n, 1))
            q = np.where(n > 0, q, np.inf)
            greedy = np.argmax(q >= q.max(axis=1, keepdims=True), axis=1)
            policy[h] = np.eye(C[h])[greedy]
            V = np.minimum(q.max(axis=1), 1.0)
        traj = play_joint(env, policy, rng, s1, env_rng)
        for h in range(H):
            a, b = traj.actions[h]
            cj = a * env.reward[h].shape[2] + b
            counts[h][traj.states[h], cj] += 1
            next_counts[h][traj.states[h], cj, traj.states[h + 1]] += 1
        out.append(policy)
    return out


def build_cover(env: MarkovGame, config: ExplorationConfig, rng: np.random.Generator, s1: int = 0,
                env_rng: np.random.Generator | None = None) -> PolicyCover:
    config.validate(env.horizon)
    cover = PolicyCover()
    for h in range(env.horizon):
        for s in range(env.states_per_stage[h]):
            phis = reachability_learner(env, (s, h), config.n0, rng, c=config.reach_c,
                                        failure_prob=config.failure_prob, s1=s1, env_rng=env_rng)
            cover.policies.extend(phis)
            cover.targets.extend([(s, h)] * len(phis))
    return cover


def collect(env: MarkovGame, cover: PolicyCover, n_collect: int, rng: np.random.Generator,
            s1: int = 0, env_rng: np.random.Generator | None = None) -> list[Trajectory]:
    if len(cover) == 0:
        raise ValueError("empty policy cover")
    return [play_joint(env, cover.policies[int(rng.integers(len(cover)))], rng, s1, env_rng)
            for _ in range(n_collect)]


@dataclass
class EmpiricalModel:
    game: MarkovGame
    counts: list[np.ndarray]

    @property
    def visited(self) -> list[np.ndarray]:
        return [c > 0 for c in self.counts]


def build_empirical_model(dataset: list[Trajectory], game_dims: MarkovGame) -> EmpiricalModel:
    """Ratio transitions and mean rewards; unvisited cells get a uniform row and zero reward."""
    sizes = game_dims.states_per_stage
    shapes = [r.shape for r in game_dims.reward]
    counts = [np.zeros(sh, dtype=np.int64) for sh in shapes]
    next_counts = [np.zeros(sh + (sizes[h + 1],), dtype=np.int64) for h, sh in enumerate(shapes)]
    reward_sums = [np.zeros(sh) for sh in shapes]
    for z in dataset:
        if len(z.actions) != len(shapes) or len(z.states) != len(shapes) + 1:
            raise ValueError("trajectory length does not match horizon")
        for h, (a, b) in enumerate(z.actions):
            s = z.states[h]
            counts[h][s, a, b] += 1
            next_counts[h][s, a, b, z.states[h + 1]] += 1
            reward_sums[h][s, a, b] += z.rewards[h]
    P_hat, r_hat = [], []
    for h, n in enumerate(counts):
        seen = n > 0
        safe = np.maximum(n, 1)
        P = np.where(seen[..., None], next_counts[h] / safe[..., None], 1.0 / sizes[h + 1])
        # renormalize away ratio rounding so the row-sum invariant holds tightly
        P_hat.append(P / P.sum(axis=-1, keepdims=True))
        r_hat.append(np.clip(np.where(seen, reward_sums[h] / safe, 0.0), 0.0, 1.0))
    game = MarkovGame(P_hat, r_hat, terminal_states=sizes[-1], turn_partition=game_dims.turn_partition)
    return EmpiricalModel(game, counts)


def plan_and_exploit(model: MarkovGame, tol: float = 1e-8) -> PolicyPair:
    """Nash pair of the empirical game by backward induction."""
    pair, _ = exact_nash(model, tol=tol)
    return pair


def reward_free_exploration(env: MarkovGame, config: ExplorationConfig, rng: np.random.Generator,
                            s1: int = 0, env_rng: np.random.Generator | None = None,
                            ) -> tuple[EmpiricalModel, PolicyCover, list[Trajectory]]:
    cover = build_cover(env, config, rng, s1, env_rng)
    data = collect(env, cover, config.n_collect, rng, s1, env_rng)
    return build_empirical_model(data, env), cover, data


def write_trajectories(path: str | Path, dataset: list[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for z in dataset:
            fh.write(json.dumps(z.to_dict()) + "\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]
