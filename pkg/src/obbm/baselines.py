"""Greedy, threshold-greedy and LP-rounding policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import SKIP, Action, Instance, MatchingState

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(20))


def _best_available(inst: Instance, state: MatchingState) -> tuple[int | None, float]:
    best_u, best_w = None, -np.inf
    w = inst.weights[state.t]
    for u in inst.neighbors[state.t]:
        if state.available >> u & 1 and w[u] > best_w:
            best_u, best_w = u, w[u]
    return best_u, float(best_w)


def greedy_action(inst: Instance, state: MatchingState) -> Action:
    """Match to the heaviest available neighbour (lowest index on ties)."""
    u, _ = _best_available(inst, state)
    return SKIP if u is None else Action.match(u)


def greedy_t_action(inst: Instance, state: MatchingState, thr: float) -> Action:
    """Greedy, but skip when the heaviest available edge is lighter than ``thr``."""
    u, w = _best_available(inst, state)
    if u is None or w < thr:
        return SKIP
    return Action.match(u)


class GreedyPolicy:
    name = "greedy"

    def bind(self, inst, rng=None):
        return lambda state: greedy_action(inst, state)


class GreedyThresholdPolicy:
    name = "greedy-t"

    def __init__(self, thr: float):
        self.thr = float(thr)

    def bind(self, inst, rng=None):
        return lambda state: greedy_t_action(inst, state, self.thr)


class SkipPolicy:
    name = "skip"

    def bind(self, inst, rng=None):
        return lambda state: SKIP


# -- LP relaxation -----------------------------------------------------


class SimplexError(RuntimeError):
    pass


def simplex_max(c: np.ndarray, A: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Maximise ``c @ x`` subject to ``A @ x <= b``, ``x >= 0`` with ``b >= 0``.

    Dense tableau simplex starting from the all-slack basis. Entering
    variables follow Dantzig's rule until ``10 * (rows + cols)`` degenerate
    pivots have occurred, then Bland's rule, which cannot cycle.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    rows, cols = A.shape
    if np.any(b < 0):
        raise SimplexError("right-hand side must be non-negative")
    T = np.zeros((rows + 1, cols + rows + 1))
    T[:rows, :cols] = A
    T[:rows, cols : cols + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :cols] = -c
    basis = list(range(cols, cols + rows))
    degenerate, bland = 0, False
    max_degenerate = 10 * (rows + cols)
    for _ in range(50 * (rows + cols) + 1000):
        reduced = T[-1, :-1]
        if bland:
            cand = np.flatnonzero(reduced < -1e-11)
            if cand.size == 0:
                break
            j = int(cand[0])
        else:
            j = int(np.argmin(reduced))
            if reduced[j] >= -1e-11:
                break
        colj = T[:rows, j]
        ok = colj > tol
        if not ok.any():
            raise SimplexError("LP is unbounded")
        ratios = np.full(rows, np.inf)
        ratios[ok] = T[:rows, -1][ok] / colj[ok]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-14)
        i = int(min(ties, key=lambda r: basis[r])) if bland else int(ties[np.argmax(colj[ties])])
        if best <= 1e-14:
            degenerate += 1
            if degenerate > max_degenerate:
                bland = True
        T[i] /= T[i, j]
        for r in range(rows + 1):
            if r != i and T[r, j] != 0.0:
                T[r] -= T[r, j] * T[i]
        basis[i] = j
    else:
        raise SimplexError("simplex did not terminate")
    x = np.zeros(cols + rows)
    for i, var in enumerate(basis):
        x[var] = T[i, -1]
    x = np.maximum(x[:cols], 0.0)
    return x, float(c @ x)


@dataclass(frozen=True)
class LpSolution:
    """Fractional edge masses, in the order of ``inst.edges``."""

    x: np.ndarray
    objective: float
    edges: tuple[tuple[int, int], ...] = field(default=())

    def matrix(self, inst: Instance) -> np.ndarray:
        out = np.zeros((inst.m, inst.n))
        for (t, u), val in zip(self.edges, self.x):
            out[t, u] = val
        return out


def lp_feasibility_problems(inst: Instance, sol: LpSolution) -> list[str]:
    X = sol.matrix(inst)
    problems = []
    if np.any(sol.x < -1e-10):
        problems.append("negative edge mass")
    row = X.sum(axis=1)
    col = X.sum(axis=0)
    for t in np.flatnonzero(row > inst.p + 1e-8):
        problems.append(f"online node {t} mass {row[t]} exceeds p={inst.p[t]}")
    for u in np.flatnonzero(col > 1 + 1e-8):
        problems.append(f"offline node {u} mass {col[u]} exceeds 1")
    return problems


def solve_matching_lp(inst: Instance) -> LpSolution:
    """Solve ``max sum w x`` s.t. per-online mass <= p_t, per-offline mass <= 1."""
    edges = tuple((t, u) for t, u, _ in inst.edges)
    if not edges:
        return LpSolution(np.zeros(0), 0.0, edges)
    k = len(edges)
    A = np.zeros((inst.m + inst.n, k))
    for j, (t, u) in enumerate(edges):
        A[t, j] = 1.0
        A[inst.m + u, j] = 1.0
    b = np.concatenate([inst.p, np.ones(inst.n)])
    c = np.array([w for _, _, w in inst.edges])
    x, obj = simplex_max(c, A, b)
    sol = LpSolution(x, obj, edges)
    problems = lp_feasibility_problems(inst, sol)
    assert not problems, problems
    return sol


def lp_round_action(inst: Instance, lp: LpSolution, state: MatchingState, coin: float) -> Action:
    """Propose ``u`` with probability ``x_tu / p_t`` using the uniform ``coin``; skip if it is taken."""
    t = state.t
    p = inst.p[t]
    if p <= 0.0:
        raise ValueError(f"online node {t} arrived but has arrival probability {p}")
    X = lp.matrix(inst)
    acc = 0.0
    for u in inst.neighbors[t]:
        acc += X[t, u] / p
        if coin < acc:
            return Action.match(u) if state.available >> u & 1 else SKIP
    return SKIP


class LpRoundPolicy:
    """Propose-then-drop rounding of the matching LP.

    One uniform coin per online node is drawn when the policy is bound, so
    a bound policy is a deterministic online algorithm. With
    ``zero_prob="skip"`` an arrival of a node whose (observed) arrival
    probability is zero is skipped instead of raising.
    """

    name = "lp-round"

    def __init__(self, zero_prob: str = "error"):
        self.zero_prob = zero_prob

    def bind(self, inst, rng):
        lp = solve_matching_lp(inst)
        X = lp.matrix(inst)
        coins = rng.random(inst.m)
        p = inst.p
        cum = {}
        for t in range(inst.m):
            if p[t] > 0:
                nb = inst.neighbors[t]
                cum[t] = (nb, np.cumsum([X[t, u] / p[t] for u in nb]))

        def decide(state):
            t = state.t
            if t not in cum:
                if self.zero_prob == "skip":
                    return SKIP
                raise ValueError(f"online node {t} arrived but has arrival probability {p[t]}")
            nb, acc = cum[t]
            k = int(np.searchsorted(acc, coins[t], side="right"))
            if k >= len(nb):
                return SKIP
            u = nb[k]
            return Action.match(u) if state.available >> u & 1 else SKIP

        return decide


@dataclass(frozen=True)
class ThresholdParam:
    thr: float
    scores: dict[float, float] = field(default_factory=dict)


def tune_threshold(validation: Sequence, grid: Sequence[float] = DEFAULT_GRID, seed: int = 0, ell: int = 5) -> ThresholdParam:
    """Pick the greedy-t threshold with the best mean competitive ratio.

    ``validation`` holds instances or ``(GeneratorConfig, count)`` pairs.
    Ties go to the smaller threshold.
    """
    from .bench import evaluate_grid, resolve_instances

    if not grid or not validation:
        raise ValueError("tune_threshold needs a non-empty grid and validation set")
    instances = resolve_instances(validation, seed)
    grid = sorted(float(g) for g in grid)
    policies = [GreedyThresholdPolicy(g) for g in grid]
    per_policy = evaluate_grid(instances, policies, ell, seed)
    scores = {}
    for g, crs in zip(grid, per_policy):
        vals = [c for c in crs if c is not None]
        scores[g] = float(np.mean(vals)) if vals else float("nan")
    best = max(grid, key=lambda g: (scores[g], -g))
    return ThresholdParam(best, scores)
