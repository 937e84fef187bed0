"""Online Bayesian bipartite matching: instances, states, actions, arrivals.

Conventions used throughout the package:

* Online nodes are indexed ``0..m-1`` in arrival order, offline nodes
  ``0..n-1``. Time step ``t`` is the 0-based index of the online node being
  processed; ``t == m`` is the terminal step.
* The set of available offline nodes is an ``int`` bitmask (bit ``u`` set
  means offline node ``u`` is unmatched). Python ints are unbounded, so
  simulation works for any ``n``; only the exact DP caps ``n``.
* Embeddings, when present, are stored online nodes first, then offline
  nodes: row ``t`` is online node ``t`` and row ``m + u`` is offline node ``u``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterator, Protocol, Sequence

import numpy as np

from .rng import stream

Edge = tuple[int, int, float]


class InstanceError(ValueError):
    """Raised when an instance violates the model invariants."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InvalidActionError(RuntimeError):
    """A policy returned an action that is not legal in the current state."""


@dataclass(frozen=True, eq=False)
class Instance:
    """An attributed bipartite graph with online arrival probabilities.

    Instances are treated as immutable; the derived arrays below are cached
    on first use.
    """

    n_offline: int
    n_online: int
    edges: tuple[Edge, ...]
    arrival_probs: tuple[float, ...]
    embeddings: tuple[tuple[float, ...], ...] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(t), int(u), float(w)) for t, u, w in self.edges))
        object.__setattr__(self, "arrival_probs", tuple(float(p) for p in self.arrival_probs))
        if self.embeddings is not None:
            object.__setattr__(self, "embeddings", tuple(tuple(float(c) for c in row) for row in self.embeddings))

    @property
    def m(self) -> int:
        return self.n_online

    @property
    def n(self) -> int:
        return self.n_offline

    @property
    def N(self) -> int:
        return self.n_online + self.n_offline

    @cached_property
    def p(self) -> np.ndarray:
        return np.asarray(self.arrival_probs, dtype=float)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.n), dtype=bool)
        for t, u, _ in self.edges:
            a[t, u] = True
        return a

    @cached_property
    def weights(self) -> np.ndarray:
        """Dense ``(m, n)`` weight matrix, zero where there is no edge."""
        w = np.zeros((self.m, self.n))
        for t, u, wt in self.edges:
            w[t, u] = wt
        return w

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Offline neighbours of each online node, ascending."""
        nb: list[list[int]] = [[] for _ in range(self.m)]
        for t, u, _ in self.edges:
            nb[t].append(u)
        return tuple(tuple(sorted(x)) for x in nb)

    @cached_property
    def neighbor_masks(self) -> tuple[int, ...]:
        return tuple(sum(1 << u for u in nb) for nb in self.neighbors)

    @cached_property
    def embedding_array(self) -> np.ndarray | None:
        if self.embeddings is None:
            return None
        return np.asarray(self.embeddings, dtype=float)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def weight(self, t: int, u: int) -> float:
        return float(self.weights[t, u])

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "n_offline": self.n_offline,
            "n_online": self.n_online,
            "edges": [[t, u, w] for t, u, w in self.edges],
            "arrival_probs": list(self.arrival_probs),
        }
        if self.embeddings is not None:
            d["embeddings"] = [list(r) for r in self.embeddings]
        d["meta"] = self.meta
        return d

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Instance":
        return cls(
            n_offline=int(d["n_offline"]),
            n_online=int(d["n_online"]),
            edges=tuple((int(t), int(u), float(w)) for t, u, w in d["edges"]),
            arrival_probs=tuple(float(p) for p in d["arrival_probs"]),
            embeddings=None if d.get("embeddings") is None else tuple(tuple(r) for r in d["embeddings"]),
            meta=dict(d.get("meta", {})),
        )

    @classmethod
    def from_json(cls, s: str) -> "Instance":
        return cls.from_dict(json.loads(s))


def make_instance(weights, arrival_probs, adjacency=None, **kw) -> Instance:
    """Build an instance from a dense ``(m, n)`` weight matrix.

    Without ``adjacency`` every strictly positive weight becomes an edge.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-d (online, offline) matrix")
    adj = w > 0 if adjacency is None else np.asarray(adjacency, dtype=bool)
    edges = tuple((int(t), int(u), float(w[t, u])) for t, u in zip(*np.nonzero(adj)))
    return Instance(w.shape[1], w.shape[0], edges, tuple(arrival_probs), **kw)


def validate_instance(inst: Instance) -> list[str]:
    """Return every violated invariant; an empty list means the instance is valid."""
    problems = []
    if inst.n_offline < 0 or inst.n_online < 0:
        problems.append("negative node count")
    seen = set()
    for i, (t, u, w) in enumerate(inst.edges):
        if not (0 <= t < inst.n_online) or not (0 <= u < inst.n_offline):
            problems.append(f"edge {i} index out of range: ({t}, {u})")
        if (t, u) in seen:
            problems.append(f"duplicate edge ({t}, {u})")
        seen.add((t, u))
        if not (w >= 0) or math.isinf(w):
            problems.append(f"negative weight on edge ({t}, {u}): {w}")
    if len(inst.arrival_probs) != inst.n_online:
        problems.append(f"arrival_probs has length {len(inst.arrival_probs)}, expected {inst.n_online}")
    for t, p in enumerate(inst.arrival_probs):
        if not (0.0 <= p <= 1.0):
            problems.append(f"probability out of range at online node {t}: {p}")
    if inst.embeddings is not None:
        if len(inst.embeddings) != inst.N:
            problems.append(f"embeddings has {len(inst.embeddings)} rows, expected {inst.N}")
        dims = {len(r) for r in inst.embeddings}
        if len(dims) > 1:
            problems.append("embeddings have inconsistent dimension")
        if any(not (0.0 <= c <= 1.0) for r in inst.embeddings for c in r):
            problems.append("embedding coordinate outside [0, 1]")
    return problems


def require_valid(inst: Instance) -> Instance:
    problems = validate_instance(inst)
    if problems:
        raise InstanceError(problems)
    return inst


# -- states and actions ------------------------------------------------


@dataclass(frozen=True)
class Action:
    """Match the arriving node to offline node ``offline``, or skip when ``None``."""

    offline: int | None = None

    @property
    def is_skip(self) -> bool:
        return self.offline is None

    @classmethod
    def match(cls, u: int) -> "Action":
        return cls(int(u))

    def __repr__(self):
        return "Skip" if self.offline is None else f"Match({self.offline})"


SKIP = Action(None)


@dataclass(frozen=True)
class MatchingState:
    """Available offline set, current online index and arrival history.

    ``history`` holds the arrival bits of online nodes ``0..t-1``.
    """

    available: int
    t: int
    arrived: bool = True
    history: tuple[int, ...] = ()

    def available_nodes(self, n: int) -> list[int]:
        return [u for u in range(n) if self.available >> u & 1]

    @classmethod
    def initial(cls, inst: Instance, arrived: bool = True) -> "MatchingState":
        return cls(inst.full_mask, 0, arrived, ())


def available_neighbors(inst: Instance, state: MatchingState) -> list[int]:
    mask = inst.neighbor_masks[state.t] & state.available
    return [u for u in inst.neighbors[state.t] if mask >> u & 1]


def check_action(inst: Instance, state: MatchingState, action: Action) -> None:
    if not isinstance(action, Action):
        raise InvalidActionError(f"policy returned {action!r}, not an Action")
    if action.is_skip:
        return
    u = action.offline
    if not (0 <= u < inst.n):
        raise InvalidActionError(f"offline index {u} out of range at t={state.t}")
    if not state.available >> u & 1:
        raise InvalidActionError(f"offline node {u} is already matched at t={state.t}")
    if not inst.adjacency[state.t, u]:
        raise InvalidActionError(f"offline node {u} is not a neighbour of online node {state.t}")


class Policy(Protocol):
    """A matching policy.

    ``bind`` is called once per episode with the instance and the episode's
    random stream; it returns the per-step decision function. Deterministic
    policies ignore ``rng``.
    """

    name: str

    def bind(self, inst: Instance, rng: np.random.Generator) -> Callable[[MatchingState], Action]: ...


# -- arrivals ----------------------------------------------------------


def sample_arrivals(inst: Instance, rng: np.random.Generator | int) -> np.ndarray:
    """Draw each online node's arrival independently; returns a uint8 vector."""
    if not isinstance(rng, np.random.Generator):
        rng = stream(int(rng), "arrivals")
    return (rng.random(inst.m) < inst.p).astype(np.uint8)


def arrival_probability(inst: Instance, a: Sequence[int]) -> float:
    a = np.asarray(a)
    if a.shape != (inst.m,):
        raise ValueError(f"arrival sequence has length {a.size}, expected {inst.m}")
    p = inst.p
    return float(np.prod(np.where(a == 1, p, 1.0 - p)))


def all_arrival_sequences(m: int) -> Iterator[tuple[int, ...]]:
    return itertools.product((0, 1), repeat=m)


def run_episode(
    inst: Instance,
    decide: Callable[[MatchingState], Action],
    a: Sequence[int],
    check: bool = True,
) -> list[tuple[int, int]]:
    """Play one episode on arrival vector ``a``; returns matched ``(online, offline)`` pairs."""
    available = inst.full_mask
    history: list[int] = []
    matched = []
    for t in range(inst.m):
        if a[t]:
            state = MatchingState(available, t, True, tuple(history))
            action = decide(state)
            if check:
                check_action(inst, state, action)
            if not action.is_skip:
                matched.append((t, action.offline))
                available &= ~(1 << action.offline)
        history.append(int(a[t]))
    return matched
