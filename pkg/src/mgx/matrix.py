"""One-shot matrix games: zero-sum minimax and general-sum bimatrix equilibria.

Convention throughout: the row (max) player receives ``P[a, b]`` and the
column (min) player pays ``Q[a, b]``. A zero-sum game has ``P == Q``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

SUPPORT_ENUM_MAX = 6
DEFAULT_TOL = 1e-8


class MatrixGameError(RuntimeError):
    """A solver could not produce a certified equilibrium."""


@dataclass
class BimatrixSolution:
    phi: np.ndarray
    psi: np.ndarray
    value_max: float
    value_min: float
    exploitability_max: float
    exploitability_min: float
    method: str = ""

    @property
    def value(self) -> float:
        return self.value_max


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or min(M.shape) < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def exploitability(P, Q, phi, psi) -> tuple[float, float]:
    """Residuals of the two equilibrium conditions: (gap_max, gap_min)."""
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    phi, psi = np.asarray(phi, dtype=float), np.asarray(psi, dtype=float)
    if P.shape != Q.shape or P.shape != (phi.size, psi.size):
        raise ValueError(f"shape mismatch: P{P.shape}, Q{Q.shape}, phi({phi.size}), psi({psi.size})")
    Ppsi = P @ psi
    phiQ = phi @ Q
    return float(Ppsi.max() - phi @ Ppsi), float(phiQ @ psi - phiQ.min())


def _solution(P, Q, phi, psi, method: str) -> BimatrixSolution:
    gmax, gmin = exploitability(P, Q, phi, psi)
    return BimatrixSolution(phi, psi, float(phi @ P @ psi), float(phi @ Q @ psi), gmax, gmin, method)


def _vertex(P: np.ndarray, Q: np.ndarray) -> BimatrixSolution:
    """Equilibrium of a vector game: one player has a single action."""
    A, B = P.shape
    phi, psi = np.zeros(A), np.zeros(B)
    if B == 1:
        col = P[:, 0]
        phi[int(np.argmax(col >= col.max()))] = 1.0
        psi[0] = 1.0
    else:
        row = Q[0]
        phi[0] = 1.0
        psi[int(np.argmax(row <= row.min()))] = 1.0
    return _solution(P, Q, phi, psi, "vertex")


def _normalize(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def _polish_zero_sum(Q: np.ndarray, phi: np.ndarray, psi: np.ndarray):
    """Re-solve the indifference equations on the supports found by the LP."""
    I = np.flatnonzero(phi > 1e-9)
    J = np.flatnonzero(psi > 1e-9)
    x = _support_solve(Q[I][:, J].T, len(I))
    y = _support_solve(Q[I][:, J], len(J))
    if x is None or y is None:
        return None
    phi2, psi2 = np.zeros_like(phi), np.zeros_like(psi)
    phi2[I], psi2[J] = x, y
    return phi2, psi2


def nash_zero_sum(Q, tol: float = DEFAULT_TOL) -> BimatrixSolution:
    """Minimax strategies of the zero-sum game where max receives and min pays Q."""
    Q = _as_matrix(Q, "Q")
    A, B = Q.shape
    if A == 1 or B == 1:
        return _vertex(Q, Q)
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    # max v  s.t.  Q^T phi >= v, sum(phi) = 1, phi >= 0
    res = linprog(
        np.r_[np.zeros(A), -1.0],
        A_ub=np.c_[-Q.T, np.ones(B)], b_ub=np.zeros(B),
        A_eq=np.r_[np.ones(A), 0.0][None, :], b_eq=[1.0],
        bounds=[(0, None)] * A + [(None, None)], method="highs", options=opts,
    )
    if res.status != 0:
        raise MatrixGameError(f"zero-sum LP failed: {res.message}")
    phi = _normalize(res.x[:A])
    psi = _normalize(-res.ineqlin.marginals)
    sol = _solution(Q, Q, phi, psi, "lp")
    if max(sol.exploitability_max, sol.exploitability_min) > tol:
        polished = _polish_zero_sum(Q, phi, psi)
        if polished is not None:
            sol = _solution(Q, Q, *polished, "lp+polish")
    if max(sol.exploitability_max, sol.exploitability_min) > tol:
        if max(A, B) <= SUPPORT_ENUM_MAX:
            return _best_of(support_enumeration(Q, Q), "support_enumeration")
        raise MatrixGameError(f"zero-sum solution not certified: exploitability "
                              f"({sol.exploitability_max:.3g}, {sol.exploitability_min:.3g}) > {tol}")
    return sol


# -- Lemke-Howson ----------------------------------------------------------


def _lex_min_row(tab: np.ndarray, col: int, lex_cols: np.ndarray) -> int:
    c = tab[:, col]
    rows = np.flatnonzero(c > 1e-12)
    if rows.size == 0:
        raise MatrixGameError("unbounded ray in Lemke-Howson pivot")
    for k in itertools.chain([tab.shape[1] - 1], lex_cols):
        ratios = tab[rows, k] / c[rows]
        best = ratios.min()
        rows = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        if rows.size == 1:
            break
    return int(rows[0])


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])


def lemke_howson(P: np.ndarray, Q: np.ndarray, dropped_label: int = 0, max_pivots: int | None = None):
    """Complementary pivoting on the two best-response polytopes.

    Returns (phi, psi, pivots), or None if ``max_pivots`` is exceeded.
    Labels ``0..A-1`` are rows, ``A..A+B-1`` are columns.
    """
    A, B = P.shape
    if max_pivots is None:
        max_pivots = 10 * (A + B)
    # positive payoffs for both players; min's payoff is -Q
    R = P - P.min() + 1.0
    C = Q.max() - Q + 1.0
    # tableau for psi: R psi + slack_row = 1 (A rows); variables: slacks 0..A-1, psi A..A+B-1
    t_psi = np.hstack([np.eye(A), R, np.ones((A, 1))])
    # tableau for phi: C^T phi + slack_col = 1 (B rows); variables: phi 0..A-1, slacks A..A+B-1
    t_phi = np.hstack([C.T, np.eye(B), np.ones((B, 1))])
    basis_psi = list(range(A))
    basis_phi = list(range(A, A + B))
    lex_psi = np.arange(A)
    lex_phi = np.arange(A, A + B)

    entering = dropped_label
    use_phi = dropped_label < A
    for pivots in range(1, max_pivots + 1):
        tab, basis, lex = (t_phi, basis_phi, lex_phi) if use_phi else (t_psi, basis_psi, lex_psi)
        row = _lex_min_row(tab, entering, lex)
        leaving = basis[row]
        _pivot(tab, row, entering)
        basis[row] = entering
        if leaving == dropped_label:
            phi, psi = np.zeros(A), np.zeros(B)
            for r, v in enumerate(basis_phi):
                if v < A:
                    phi[v] = t_phi[r, -1]
            for r, v in enumerate(basis_psi):
                if v >= A:
                    psi[v - A] = t_psi[r, -1]
            return _normalize(phi), _normalize(psi), pivots
        entering = leaving
        use_phi = not use_phi
    return None


def nash_general_sum(P, Q, tol: float = DEFAULT_TOL) -> BimatrixSolution:
    """A Nash equilibrium of the bimatrix game (max receives P, min pays Q)."""
    P, Q = _as_matrix(P, "P"), _as_matrix(Q, "Q")
    if P.shape != Q.shape:
        raise ValueError(f"P{P.shape} and Q{Q.shape} differ in shape")
    A, B = P.shape
    if A == 1 or B == 1:
        return _vertex(P, Q)
    out = lemke_howson(P, Q, dropped_label=0)
    if out is not None:
        sol = _solution(P, Q, out[0], out[1], "lemke_howson")
        if max(sol.exploitability_max, sol.exploitability_min) <= tol:
            return sol
    if A <= SUPPORT_ENUM_MAX and B <= SUPPORT_ENUM_MAX:
        return _best_of(support_enumeration(P, Q), "support_enumeration")
    raise MatrixGameError(f"Lemke-Howson failed on a {A}x{B} game and support enumeration is unavailable")


# -- support enumeration ---------------------------------------------------


def _support_solve(M: np.ndarray, n: int):
    """Find y >= 0 on a support with M y = v 1 and sum(y) = 1; None if infeasible."""
    k = M.shape[0]
    lhs = np.zeros((k + 1, n + 1))
    lhs[:k, :n] = M
    lhs[:k, n] = -1.0
    lhs[k, :n] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    if k == n:
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            return None
    else:
        sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        if np.abs(lhs @ sol - rhs).max() > 1e-10:
            return None
    y = sol[:n]
    if not np.all(np.isfinite(y)) or y.min() < -1e-12:
        return None
    return _normalize(y)


def _supports(n: int, size: int):
    return itertools.combinations(range(n), size)


def support_enumeration(P, Q, eq_tol: float = 1e-9) -> list[BimatrixSolution]:
    """All equilibria reachable by solving indifference systems on support pairs."""
    P, Q = _as_matrix(P, "P"), _as_matrix(Q, "Q")
    A, B = P.shape
    if A > SUPPORT_ENUM_MAX or B > SUPPORT_ENUM_MAX:
        raise ValueError(f"support enumeration limited to {SUPPORT_ENUM_MAX}x{SUPPORT_ENUM_MAX}, got {A}x{B}")
    found: list[BimatrixSolution] = []
    seen = set()

    def consider(I, J):
        # psi makes max indifferent over I (payoff P); phi makes min indifferent over J (cost Q)
        y = _support_solve(P[np.ix_(I, J)], len(J))
        if y is None:
            return
        x = _support_solve(Q[np.ix_(I, J)].T, len(I))
        if x is None:
            return
        phi, psi = np.zeros(A), np.zeros(B)
        phi[list(I)], psi[list(J)] = x, y
        sol = _solution(P, Q, phi, psi, "support_enumeration")
        if max(sol.exploitability_max, sol.exploitability_min) > eq_tol:
            return
        key = (tuple(np.round(phi, 9)), tuple(np.round(psi, 9)))
        if key not in seen:
            seen.add(key)
            found.append(sol)

    for k in range(1, min(A, B) + 1):
        for I in _supports(A, k):
            for J in _supports(B, k):
                consider(I, J)
    if not found:
        # degenerate games may only have equilibria with unequal support sizes
        for ka in range(1, A + 1):
            for kb in range(1, B + 1):
                if ka == kb:
                    continue
                for I in _supports(A, ka):
                    for J in _supports(B, kb):
                        consider(I, J)
    return found


def _best_of(solutions: list[BimatrixSolution], method: str) -> BimatrixSolution:
    if not solutions:
        raise MatrixGameError("support enumeration found no equilibrium")
    best = min(solutions, key=lambda s: max(s.exploitability_max, s.exploitability_min))
    best.method = method
    return best
