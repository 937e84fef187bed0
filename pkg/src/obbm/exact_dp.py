"""Exact value-to-go, the optimal online policy and its edge decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import SKIP, Action, Instance, MatchingState, Policy, check_action

DEFAULT_DP_LIMIT = 20
HARD_DP_LIMIT = 64
ENUM_LIMIT = 12


class DPLimitError(ValueError):
    """The instance is too large for exact dynamic programming."""


class VtgTable:
    """Value-to-go for every (available set, time step) pair of one instance.

    ``values[t, S]`` is the expected weight the optimal online algorithm
    collects from online nodes ``t..m-1`` when the offline nodes in bitmask
    ``S`` are still free. The table is filled backwards from ``t = m``, so
    each entry is computed exactly once; it holds ``(m + 1) * 2**n`` floats.
    """

    def __init__(self, inst: Instance, dp_limit: int = DEFAULT_DP_LIMIT):
        limit = min(dp_limit, HARD_DP_LIMIT)
        if inst.n > limit:
            raise DPLimitError(f"{inst.n} offline nodes exceeds dp_limit={limit}")
        self.inst = inst
        m, n = inst.m, inst.n
        masks = np.arange(1 << n, dtype=np.int64)
        values = np.zeros((m + 1, 1 << n))
        w, p = inst.weights, inst.p
        for t in range(m - 1, -1, -1):
            nxt = values[t + 1]
            best = nxt.copy()
            for u in inst.neighbors[t]:
                bit = 1 << u
                has = (masks & bit) != 0
                cand = w[t, u] + nxt[masks[has] ^ bit]
                best[has] = np.maximum(best[has], cand)
            values[t] = (1.0 - p[t]) * nxt + p[t] * best
        self.values = values

    def value(self, S: int, t: int) -> float:
        return float(self.values[t, S])

    @property
    def total(self) -> float:
        """The value of the whole instance, starting with every offline node free."""
        return float(self.values[0, self.inst.full_mask])

    def match_value(self, S: int, t: int, u: int) -> float:
        """Value of matching online node ``t`` to ``u`` and then acting optimally."""
        return float(self.inst.weights[t, u] + self.values[t + 1, S & ~(1 << u)])

    def skip_value(self, S: int, t: int) -> float:
        return float(self.values[t + 1, S])

    def action_values(self, state: MatchingState) -> tuple[float, dict[int, float]]:
        """Skip value and per-neighbour match values in ``state``."""
        S, t = state.available, state.t
        skip = self.skip_value(S, t)
        matches = {u: self.match_value(S, t, u) for u in self.inst.neighbors[t] if S >> u & 1}
        return skip, matches

    def action(self, state: MatchingState) -> Action:
        skip, matches = self.action_values(state)
        best_u, best = None, -np.inf
        for u, v in matches.items():  # ascending u, strict > keeps the lowest index
            if v > best:
                best_u, best = u, v
        # an exact tie with skipping resolves to the match
        if best_u is not None and best >= skip:
            return Action.match(best_u)
        return SKIP


def vtg(inst: Instance, S: int | None = None, t: int = 0, dp_limit: int = DEFAULT_DP_LIMIT) -> float:
    """Value-to-go of available set ``S`` (default: all offline nodes) from step ``t``."""
    if not 0 <= t <= inst.m:
        raise ValueError(f"t={t} outside 0..{inst.m}")
    table = VtgTable(inst, dp_limit)
    return table.value(inst.full_mask if S is None else S, t)


def opt_on_action(inst: Instance, state: MatchingState, dp_limit: int = DEFAULT_DP_LIMIT) -> Action:
    return VtgTable(inst, dp_limit).action(state)


class OptOnPolicy:
    """The optimal online algorithm, greedy with respect to exact value-to-go."""

    name = "opt-on"

    def __init__(self, dp_limit: int = DEFAULT_DP_LIMIT):
        self.dp_limit = dp_limit

    def bind(self, inst: Instance, rng=None) -> Callable[[MatchingState], Action]:
        return VtgTable(inst, self.dp_limit).action


def brute_force_value(inst: Instance) -> float:
    """Test oracle: the value-to-go recurrence evaluated by plain recursion.

    No memoisation and no bitmasks; the available set is a frozenset. Only
    meant for instances with at most 12 online and 12 offline nodes.
    """
    if inst.m > ENUM_LIMIT or inst.n > ENUM_LIMIT:
        raise DPLimitError(f"brute force limited to {ENUM_LIMIT}x{ENUM_LIMIT}")
    nbrs = [[(u, w) for (tt, u, w) in inst.edges if tt == t] for t in range(inst.m)]
    p = inst.arrival_probs

    def value(S: frozenset, t: int) -> float:
        if not S or t == inst.m:
            return 0.0
        skip = value(S, t + 1)
        best = skip
        for u, w in nbrs[t]:
            if u in S:
                best = max(best, w + value(S - {u}, t + 1))
        return (1.0 - p[t]) * skip + p[t] * best

    return value(frozenset(range(inst.n)), 0)


def _enumerate(inst: Instance, decide, visit, check: bool = True) -> None:
    """Walk every arrival prefix with positive probability.

    ``visit(prob, matched)`` is called once per complete arrival sequence,
    with the sequence's probability and the policy's matching on it.
    """
    if inst.m > ENUM_LIMIT:
        raise DPLimitError(f"enumeration limited to m <= {ENUM_LIMIT}")
    p = inst.arrival_probs

    def walk(t, available, history, prob, matched):
        if t == inst.m:
            visit(prob, matched)
            return
        if p[t] < 1.0:
            walk(t + 1, available, history + (0,), prob * (1.0 - p[t]), matched)
        if p[t] > 0.0:
            state = MatchingState(available, t, True, history)
            action = decide(state)
            if check:
                check_action(inst, state, action)
            if action.is_skip:
                walk(t + 1, available, history + (1,), prob * p[t], matched)
            else:
                u = action.offline
                walk(t + 1, available & ~(1 << u), history + (1,), prob * p[t], matched + ((t, u),))

    walk(0, inst.full_mask, (), 1.0, ())


def policy_expected_value(inst: Instance, policy: Policy, rng: np.random.Generator | None = None) -> float:
    """Exact expected matching weight of ``policy`` over all arrival sequences.

    A randomised policy is bound once, so its random choices are fixed
    before any arrival is observed and the result is the value of one
    deterministic online algorithm.
    """
    decide = policy.bind(inst, rng if rng is not None else np.random.default_rng(0))
    w = inst.weights
    total = 0.0

    def visit(prob, matched):
        nonlocal total
        total += prob * sum(w[t, u] for t, u in matched)

    _enumerate(inst, decide, visit)
    return total


@dataclass(frozen=True)
class EdgeContribution:
    online: int
    offline: int
    weight: float
    alpha: float

    @property
    def value(self) -> float:
        return self.alpha * self.weight


def edge_contributions(inst: Instance, dp_limit: int = DEFAULT_DP_LIMIT) -> list[EdgeContribution]:
    """Probability that the optimal online algorithm uses each edge.

    The sum of ``alpha * weight`` over all edges equals the instance value.
    """
    decide = VtgTable(inst, dp_limit).action
    alpha: dict[tuple[int, int], float] = {(t, u): 0.0 for t, u, _ in inst.edges}

    def visit(prob, matched):
        for e in matched:
            alpha[e] += prob

    _enumerate(inst, decide, visit)
    return [EdgeContribution(t, u, w, alpha[(t, u)]) for t, u, w in inst.edges]
