"""Finite-horizon two-player zero-sum Markov games and exact planning.

Stages are 0-based internally (``h = 0 .. H-1``); the JSON file format and
the turn partition use 1-based stage numbers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matrix import nash_zero_sum

ROW_SUM_TOL = 1e-12
TIE_TOL = 1e-12


class GameError(ValueError):
    """Raised when a game or policy violates its structural invariants."""


@dataclass
class MarkovGame:
    """Stage-indexed game MG(H, S, A, B, P, r).

    ``transition[h]`` has shape ``(S_h, A_h, B_h, S_{h+1})`` and ``reward[h]``
    has shape ``(S_h, A_h, B_h)``.
    """

    transition: list[np.ndarray]
    reward: list[np.ndarray]
    terminal_states: int = 1
    turn_partition: tuple[frozenset, frozenset] | None = None

    @property
    def horizon(self) -> int:
        return len(self.reward)

    @property
    def states_per_stage(self) -> list[int]:
        return [r.shape[0] for r in self.reward] + [self.terminal_states]

    @property
    def actions_max_per_stage(self) -> list[int]:
        return [r.shape[1] for r in self.reward]

    @property
    def actions_min_per_stage(self) -> list[int]:
        return [r.shape[2] for r in self.reward]

    @property
    def max_states(self) -> int:
        return max(self.states_per_stage)

    @property
    def is_turn_based(self) -> bool:
        return self.turn_partition is not None

    def step(self, h: int, s: int, a: int, b: int, rng: np.random.Generator) -> tuple[float, int]:
        """Sample one transition; returns (reward, next state)."""
        row = self.transition[h][s, a, b]
        s_next = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
        return float(self.reward[h][s, a, b]), min(s_next, row.shape[0] - 1)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "horizon": self.horizon,
            "states_per_stage": self.states_per_stage,
            "actions_max_per_stage": self.actions_max_per_stage,
            "actions_min_per_stage": self.actions_min_per_stage,
            "transition": [p.tolist() for p in self.transition],
            "reward": [r.tolist() for r in self.reward],
        }
        if self.turn_partition is not None:
            hmax, hmin = self.turn_partition
            d["turn_partition"] = {"max": sorted(h + 1 for h in hmax),
                                   "min": sorted(h + 1 for h in hmin)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovGame":
        try:
            transition = [np.asarray(p, dtype=float) for p in d["transition"]]
            reward = [np.asarray(r, dtype=float) for r in d["reward"]]
            sizes = list(d["states_per_stage"])
        except (KeyError, TypeError) as exc:
            raise GameError(f"malformed game object: {exc}") from exc
        partition = None
        if d.get("turn_partition") is not None:
            tp = d["turn_partition"]
            partition = (frozenset(int(h) - 1 for h in tp["max"]),
                         frozenset(int(h) - 1 for h in tp["min"]))
        game = cls(transition, reward, terminal_states=int(sizes[-1]), turn_partition=partition)
        declared = {
            "horizon": int(d["horizon"]),
            "states_per_stage": [int(x) for x in sizes],
            "actions_max_per_stage": [int(x) for x in d["actions_max_per_stage"]],
            "actions_min_per_stage": [int(x) for x in d["actions_min_per_stage"]],
        }
        for key, value in declared.items():
            if getattr(game, key) != value:
                raise GameError(f"{key} mismatch: declared {value}, arrays give {getattr(game, key)}")
        validate_game(game)
        return game

    def save(self, path: str | Path) -> None:
        # json emits floats with repr(), which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MarkovGame":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PolicyPair:
    """Per-stage, per-state action distributions for both players."""

    mu: list[np.ndarray]
    nu: list[np.ndarray]

    def to_dict(self) -> dict:
        return {"mu": [m.tolist() for m in self.mu], "nu": [n.tolist() for n in self.nu]}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyPair":
        return cls([np.asarray(m, dtype=float) for m in d["mu"]],
                   [np.asarray(n, dtype=float) for n in d["nu"]])

    def copy(self) -> "PolicyPair":
        return PolicyPair([m.copy() for m in self.mu], [n.copy() for n in self.nu])


@dataclass
class ValueTables:
    V: list[np.ndarray]
    Q: list[np.ndarray] = field(default_factory=list)


def validate_game(game: MarkovGame) -> None:
    H = game.horizon
    if H < 1:
        raise GameError("horizon must be positive")
    if len(game.transition) != H:
        raise GameError(f"expected {H} transition slabs, got {len(game.transition)}")
    sizes = game.states_per_stage
    for h in range(H):
        P, r = game.transition[h], game.reward[h]
        if r.ndim != 3 or min(r.shape) < 1:
            raise GameError(f"stage {h + 1}: reward must be a non-empty (S, A, B) array")
        if P.shape != r.shape + (sizes[h + 1],):
            raise GameError(f"stage {h + 1}: transition shape {P.shape} does not match "
                            f"reward {r.shape} and next stage size {sizes[h + 1]}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(r))):
            raise GameError(f"stage {h + 1}: non-finite entries")
        if np.any(P < 0):
            idx = tuple(int(i) for i in np.argwhere(P < 0)[0])
            raise GameError(f"negative transition probability at h={h + 1}, index {idx}")
        sums = P.sum(axis=-1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            s, a, b = (int(i) for i in np.argwhere(bad)[0])
            raise GameError(f"transition row h={h + 1}, s={s}, a={a}, b={b} sums to {sums[s, a, b]!r}")
        if np.any((r < 0) | (r > 1)):
            s, a, b = (int(i) for i in np.argwhere((r < 0) | (r > 1))[0])
            raise GameError(f"reward h={h + 1}, s={s}, a={a}, b={b} = {r[s, a, b]!r} outside [0, 1]")
    if game.turn_partition is not None:
        hmax, hmin = game.turn_partition
        if hmax & hmin or (hmax | hmin) != set(range(H)):
            raise GameError("turn_partition must split the stages into two disjoint covering sets")
        for h in hmin:
            if game.actions_max_per_stage[h] != 1:
                raise GameError(f"stage {h + 1} is a min stage but the max player has "
                                f"{game.actions_max_per_stage[h]} actions")
        for h in hmax:
            if game.actions_min_per_stage[h] != 1:
                raise GameError(f"stage {h + 1} is a max stage but the min player has "
                                f"{game.actions_min_per_stage[h]} actions")


def check_policy(game: MarkovGame, pair: PolicyPair) -> None:
    if len(pair.mu) != game.horizon or len(pair.nu) != game.horizon:
        raise GameError("policy horizon does not match game")
    for h, r in enumerate(game.reward):
        S, A, B = r.shape
        if pair.mu[h].shape != (S, A) or pair.nu[h].shape != (S, B):
            raise GameError(f"stage {h + 1}: policy shapes {pair.mu[h].shape}, {pair.nu[h].shape} "
                            f"do not match game ({S}, {A}), ({S}, {B})")


def bellman_backup(r_h: np.ndarray, P_h: np.ndarray, V_next: np.ndarray) -> np.ndarray:
    """Q[s, a, b] = r[s, a, b] + sum_s' P[s, a, b, s'] V_next[s']."""
    if P_h.shape[:-1] != r_h.shape or P_h.shape[-1] != V_next.shape[0]:
        raise GameError(f"bellman_backup: shapes {r_h.shape}, {P_h.shape}, {V_next.shape} disagree")
    return r_h + P_h @ V_next


def policy_value(game: MarkovGame, pair: PolicyPair) -> ValueTables:
    check_policy(game, pair)
    H = game.horizon
    V = [None] * (H + 1)
    Q = [None] * H
    V[H] = np.zeros(game.terminal_states)
    for h in reversed(range(H)):
        Q[h] = bellman_backup(game.reward[h], game.transition[h], V[h + 1])
        V[h] = np.einsum("sa,sab,sb->s", pair.mu[h], Q[h], pair.nu[h])
    return ValueTables(V, Q)


def _lowest_argmin(x: np.ndarray) -> np.ndarray:
    # lowest index among entries within TIE_TOL of the row minimum
    return np.argmax(x <= x.min(axis=-1, keepdims=True) + TIE_TOL, axis=-1)


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    return np.eye(n)[idx]


def best_response_min(game: MarkovGame, mu: list[np.ndarray]) -> tuple[list[np.ndarray], ValueTables]:
    """Deterministic min-player best response to ``mu`` and the values V^{mu,dagger}."""
    H = game.horizon
    if len(mu) != H or any(m.shape != r.shape[:2] for m, r in zip(mu, game.reward)):
        raise GameError("best_response_min: policy shape does not match game")
    V = [None] * (H + 1)
    Q = [None] * H
    nu = [None] * H
    V[H] = np.zeros(game.terminal_states)
    for h in reversed(range(H)):
        Q[h] = bellman_backup(game.reward[h], game.transition[h], V[h + 1])
        col = np.einsum("sa,sab->sb", mu[h], Q[h])
        b = _lowest_argmin(col)
        nu[h] = _one_hot(b, col.shape[1])
        V[h] = col[np.arange(col.shape[0]), b]
    return nu, ValueTables(V, Q)


def best_response_max(game: MarkovGame, nu: list[np.ndarray]) -> tuple[list[np.ndarray], ValueTables]:
    """Deterministic max-player best response to ``nu`` and the values V^{dagger,nu}."""
    H = game.horizon
    if len(nu) != H or any(n.shape != (r.shape[0], r.shape[2]) for n, r in zip(nu, game.reward)):
        raise GameError("best_response_max: policy shape does not match game")
    V = [None] * (H + 1)
    Q = [None] * H
    mu = [None] * H
    V[H] = np.zeros(game.terminal_states)
    for h in reversed(range(H)):
        Q[h] = bellman_backup(game.reward[h], game.transition[h], V[h + 1])
        row = np.einsum("sab,sb->sa", Q[h], nu[h])
        a = _lowest_argmin(-row)
        mu[h] = _one_hot(a, row.shape[1])
        V[h] = row[np.arange(row.shape[0]), a]
    return mu, ValueTables(V, Q)


def exact_nash(game: MarkovGame, tol: float = 1e-8) -> tuple[PolicyPair, ValueTables]:
    """Nash pair by backward induction with a matrix-game solve at every (h, s)."""
    H = game.horizon
    V = [None] * (H + 1)
    Q = [None] * H
    mu, nu = [None] * H, [None] * H
    V[H] = np.zeros(game.terminal_states)
    for h in reversed(range(H)):
        Q[h] = bellman_backup(game.reward[h], game.transition[h], V[h + 1])
        S, A, B = Q[h].shape
        mu[h], nu[h], V[h] = np.empty((S, A)), np.empty((S, B)), np.empty(S)
        for s in range(S):
            sol = nash_zero_sum(Q[h][s], tol=tol)
            mu[h][s], nu[h][s] = sol.phi, sol.psi
            V[h][s] = sol.value_max
    return PolicyPair(mu, nu), ValueTables(V, Q)


def duality_gap(game: MarkovGame, pair: PolicyPair, s1: int = 0) -> float:
    """V^{dagger,nu}(s1) - V^{mu,dagger}(s1)."""
    check_policy(game, pair)
    _, up = best_response_max(game, pair.nu)
    _, low = best_response_min(game, pair.mu)
    return float(up.V[0][s1] - low.V[0][s1])


def one_sided_gaps(game: MarkovGame, pair: PolicyPair, s1: int = 0) -> tuple[float, float]:
    """(max-player gap, min-player gap); their sum is the duality gap."""
    v = policy_value(game, pair).V[0][s1]
    _, up = best_response_max(game, pair.nu)
    _, low = best_response_min(game, pair.mu)
    return float(up.V[0][s1] - v), float(v - low.V[0][s1])


def uniform_policy(game: MarkovGame) -> PolicyPair:
    return PolicyPair([np.full(r.shape[:2], 1.0 / r.shape[1]) for r in game.reward],
                      [np.full((r.shape[0], r.shape[2]), 1.0 / r.shape[2]) for r in game.reward])


def random_policy(game: MarkovGame, rng: np.random.Generator) -> PolicyPair:
    return PolicyPair([rng.dirichlet(np.ones(r.shape[1]), size=r.shape[0]) for r in game.reward],
                      [rng.dirichlet(np.ones(r.shape[2]), size=r.shape[0]) for r in game.reward])
