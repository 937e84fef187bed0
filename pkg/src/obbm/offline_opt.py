"""Maximum-weight matching on the realized graph (the offline benchmark)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Instance, all_arrival_sequences, arrival_probability


@dataclass(frozen=True)
class RealizedGraph:
    """The subgraph induced by the offline nodes and the online nodes that arrived.

    Online nodes keep their original indices.
    """

    n_offline: int
    online: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]


def realize(inst: Instance, a: Sequence[int]) -> RealizedGraph:
    if len(a) != inst.m:
        raise ValueError(f"arrival sequence has length {len(a)}, expected {inst.m}")
    online = tuple(t for t in range(inst.m) if a[t])
    keep = set(online)
    return RealizedGraph(inst.n, online, tuple(e for e in inst.edges if e[0] in keep))


def _hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect assignment on a square matrix; returns column of each row.

    Shortest augmenting paths with row/column potentials, O(K^3).
    """
    k = cost.shape[0]
    INF = np.inf
    u = np.zeros(k + 1)
    v = np.zeros(k + 1)
    p = np.zeros(k + 1, dtype=np.int64)  # p[j]: row assigned to column j (1-based, 0 = none)
    way = np.zeros(k + 1, dtype=np.int64)
    for i in range(1, k + 1):
        p[0] = i
        j0 = 0
        minv = np.full(k + 1, INF)
        used = np.zeros(k + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.zeros(k, dtype=np.int64)
    for j in range(1, k + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def max_weight_matching(g: RealizedGraph) -> tuple[list[tuple[int, int]], float]:
    """Maximum-weight (not necessarily maximum-cardinality) matching.

    Returns the matched ``(online, offline)`` pairs and the total weight.
    Missing edges are zero-weight pads in the square cost matrix, so leaving
    a node unmatched is always representable.
    """
    if not g.edges:
        return [], 0.0
    rows = {t: i for i, t in enumerate(g.online)}
    k = max(len(g.online), g.n_offline)
    w = np.zeros((k, k))
    present = np.zeros((k, k), dtype=bool)
    for t, u, wt in g.edges:
        w[rows[t], u] = wt
        present[rows[t], u] = True
    assign = _hungarian(-w)
    matching = []
    total = 0.0
    for i, t in enumerate(g.online):
        j = int(assign[i])
        if present[i, j] and w[i, j] > 0:
            matching.append((t, j))
            total += w[i, j]
    return matching, float(total)


def offline_opt(inst: Instance, a: Sequence[int]) -> float:
    return max_weight_matching(realize(inst, a))[1]


def expected_offline_opt(inst: Instance) -> float:
    """Exact expectation of the offline optimum over all arrival sequences."""
    total = 0.0
    for a in all_arrival_sequences(inst.m):
        pr = arrival_probability(inst, a)
        if pr > 0:
            total += pr * offline_opt(inst, a)
    return total
