"""Seeded instance generators.

Every generator takes ``(m, n, ..., seed)`` where ``m`` is the number of
online nodes and ``n`` the number of offline nodes, and draws arrival
probabilities from U(0, 1). ``seed`` may be an int or a numpy Generator;
ints are mapped to the ``"instance"`` stream of :mod:`obbm.rng`.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import Instance
from .rng import stream

FAMILIES = ("ER", "BA", "GEOM", "BRGG_THEORY", "RIDESHARE", "BASEGRAPH")


class GeneratorError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed), "instance")


def _seed_meta(seed) -> Any:
    return None if isinstance(seed, np.random.Generator) else int(seed)


def _from_dense(m, n, adj, w, probs, meta, embeddings=None) -> Instance:
    edges = tuple((int(t), int(u), float(w[t, u])) for t, u in zip(*np.nonzero(adj)))
    emb = None if embeddings is None else tuple(tuple(float(c) for c in r) for r in embeddings)
    return Instance(n, m, edges, tuple(float(x) for x in probs), emb, meta)


def gen_er(m: int, n: int, p: float, seed) -> Instance:
    """Erdos-Renyi bipartite graph: each pair is an edge with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise GeneratorError(f"ER p={p} outside [0, 1]")
    rng = _rng(seed)
    adj = rng.random((m, n)) < p
    w = rng.random((m, n))
    probs = rng.random(m)
    return _from_dense(m, n, adj, w, probs, {"family": "ER", "p": p, "seed": _seed_meta(seed)})


def gen_ba(m: int, n: int, b: int, seed) -> Instance:
    """Preferential attachment: each online node picks ``b`` distinct offline nodes.

    Offline node ``u`` is chosen with probability proportional to
    ``degree(u) + 1``; the ``+1`` lets nodes of degree zero be picked at all.
    """
    if not 0 <= b <= n:
        raise GeneratorError(f"BA b={b} must satisfy 0 <= b <= n={n}")
    rng = _rng(seed)
    deg = np.zeros(n)
    adj = np.zeros((m, n), dtype=bool)
    for t in range(m):
        weights = deg + 1.0
        picks = rng.choice(n, size=b, replace=False, p=weights / weights.sum())
        adj[t, picks] = True
        deg[picks] += 1
    w = rng.random((m, n))
    probs = rng.random(m)
    return _from_dense(m, n, adj, w, probs, {"family": "BA", "b": b, "seed": _seed_meta(seed)})


def gen_geom(m: int, n: int, q: float, seed) -> Instance:
    """Geometric graph in the unit square, keeping the ``ceil(q*m*n)`` heaviest pairs.

    Weight of a pair is ``1 - dist / sqrt(2)``.
    """
    if not 0.0 < q <= 1.0:
        raise GeneratorError(f"GEOM q={q} outside (0, 1]")
    rng = _rng(seed)
    pos_on = rng.random((m, 2))
    pos_off = rng.random((n, 2))
    dist = np.linalg.norm(pos_on[:, None, :] - pos_off[None, :, :], axis=2)
    w = 1.0 - dist / math.sqrt(2.0)
    keep = math.ceil(round(q * m * n, 9))
    order = np.argsort(-w, axis=None, kind="stable")[:keep]
    adj = np.zeros(m * n, dtype=bool)
    adj[order] = True
    adj = adj.reshape(m, n)
    probs = rng.random(m)
    emb = np.vstack([pos_on, pos_off])
    return _from_dense(m, n, adj, w, probs, {"family": "GEOM", "q": q, "seed": _seed_meta(seed)}, emb)


# -- b-RGG with smooth latent distributions ----------------------------


@dataclass(frozen=True)
class SmoothSpec:
    """A latent distribution on ``[0, 1]^d`` with a known density bound.

    ``kind`` is ``"uniform"`` (density 1), ``"boxes"`` (a mixture of uniform
    distributions on axis-aligned boxes) or ``"point"`` (a point mass at
    ``point``; unbounded density, only for demonstrating failures).
    """

    kind: str = "uniform"
    boxes: tuple[tuple[float, tuple[float, ...], tuple[float, ...]], ...] = ()
    point: tuple[float, ...] = ()

    @classmethod
    def uniform(cls) -> "SmoothSpec":
        return cls("uniform")

    @classmethod
    def mixture(cls, boxes: Sequence[tuple[float, Sequence[float], Sequence[float]]]) -> "SmoothSpec":
        total = sum(wt for wt, _, _ in boxes)
        norm = tuple((wt / total, tuple(lo), tuple(hi)) for wt, lo, hi in boxes)
        return cls("boxes", norm)

    @classmethod
    def point_mass(cls, point: Sequence[float]) -> "SmoothSpec":
        return cls("point", point=tuple(point))

    @property
    def beta(self) -> float:
        """Supremum of the density."""
        if self.kind == "uniform":
            return 1.0
        if self.kind == "point":
            return math.inf
        # the density is constant on the cells of the grid cut by all box faces
        d = len(self.boxes[0][1])
        cuts = [sorted({0.0, 1.0} | {b[1][i] for b in self.boxes} | {b[2][i] for b in self.boxes}) for i in range(d)]
        best = 0.0
        for cell in itertools.product(*[range(len(c) - 1) for c in cuts]):
            mid = [0.5 * (cuts[i][j] + cuts[i][j + 1]) for i, j in enumerate(cell)]
            dens = sum(
                wt / float(np.prod(np.subtract(hi, lo)))
                for wt, lo, hi in self.boxes
                if all(lo[i] <= mid[i] <= hi[i] for i in range(d))
            )
            best = max(best, dens)
        return best

    def sample(self, rng: np.random.Generator, count: int, d: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.random((count, d))
        if self.kind == "point":
            return np.tile(np.asarray(self.point, dtype=float), (count, 1))
        if self.kind != "boxes":
            raise GeneratorError(f"unknown smooth spec kind {self.kind!r}")
        wts = np.array([b[0] for b in self.boxes])
        lo = np.array([b[1] for b in self.boxes], dtype=float)
        hi = np.array([b[2] for b in self.boxes], dtype=float)
        which = rng.choice(len(self.boxes), size=count, p=wts)
        u = rng.random((count, d))
        return lo[which] + u * (hi[which] - lo[which])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "boxes": [[w, list(lo), list(hi)] for w, lo, hi in self.boxes], "point": list(self.point)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "SmoothSpec":
        if not d:
            return cls.uniform()
        boxes = tuple((float(w), tuple(lo), tuple(hi)) for w, lo, hi in d.get("boxes", ()))
        return cls(d.get("kind", "uniform"), boxes, tuple(d.get("point", ())))


def linf_edges(emb_on: np.ndarray, emb_off: np.ndarray, delta: float) -> np.ndarray:
    """Adjacency of the geometric rule: edge iff the l-infinity distance is at most ``delta``."""
    diff = np.abs(emb_on[:, None, :] - emb_off[None, :, :]).max(axis=2)
    return diff <= delta


def gen_brgg_theory(m: int, n: int, d: int, delta: float, smooth: SmoothSpec | None, seed) -> Instance:
    """Bipartite random geometric graph with latent embeddings stored on the instance."""
    if delta <= 0:
        raise GeneratorError("delta must be positive")
    smooth = smooth or SmoothSpec.uniform()
    if smooth.kind == "boxes" and smooth.beta < 1.0:
        raise GeneratorError("smooth spec must have beta >= 1")
    rng = _rng(seed)
    emb = smooth.sample(rng, m + n, d)
    adj = linf_edges(emb[:m], emb[m:], delta)
    w = rng.random((m, n))
    probs = rng.random(m)
    meta = {"family": "BRGG_THEORY", "d": d, "delta": delta, "smooth": smooth.to_dict(), "seed": _seed_meta(seed)}
    return _from_dense(m, n, adj, w, probs, meta, emb)


# -- file-backed families ----------------------------------------------


def _read_csv(path, required: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
                raise GeneratorError(f"{path}: header must contain {', '.join(required)}")
            return list(reader)
    except OSError as exc:
        raise GeneratorError(f"cannot read {path}: {exc}") from exc


@dataclass
class RoadGraph:
    """Precomputed drive times between intersections (minutes, possibly asymmetric)."""

    nodes: list[str]
    minutes: dict[tuple[str, str], float] = field(default_factory=dict)

    @classmethod
    def load(cls, times_file, nodes_file=None) -> "RoadGraph":
        rows = _read_csv(times_file, ("from_id", "to_id", "minutes"))
        times: dict[tuple[str, str], float] = {}
        seen: dict[str, None] = {}
        for i, r in enumerate(rows):
            try:
                val = float(r["minutes"])
            except (TypeError, ValueError) as exc:
                raise GeneratorError(f"{times_file}: bad minutes on data row {i + 1}") from exc
            if not val >= 0:
                raise GeneratorError(f"{times_file}: negative drive time on data row {i + 1}")
            times[(r["from_id"], r["to_id"])] = val
            seen.setdefault(r["from_id"])
            seen.setdefault(r["to_id"])
        if nodes_file is not None:
            nodes = [r["id"] for r in _read_csv(nodes_file, ("id",))]
        else:
            nodes = list(seen)
        return cls(nodes, times)


def gen_rideshare(road: RoadGraph | str | Path, m: int, n: int, threshold_min: float = 15.0, seed=0) -> Instance:
    """Drivers (offline) and riders (online) on distinct sampled intersections.

    An edge exists when the drive time from driver to rider is at most the
    threshold; its weight is ``(threshold - time) / threshold``.
    """
    if not isinstance(road, RoadGraph):
        road = RoadGraph.load(road)
    if len(road.nodes) < m + n:
        raise GeneratorError(f"road graph has {len(road.nodes)} intersections, need {m + n}")
    if threshold_min <= 0:
        raise GeneratorError("threshold must be positive")
    rng = _rng(seed)
    picks = rng.choice(len(road.nodes), size=m + n, replace=False)
    drivers = [road.nodes[i] for i in picks[:n]]
    riders = [road.nodes[i] for i in picks[n:]]
    adj = np.zeros((m, n), dtype=bool)
    w = np.zeros((m, n))
    for t, rider in enumerate(riders):
        for u, driver in enumerate(drivers):
            time = road.minutes.get((driver, rider))
            if time is not None and time <= threshold_min:
                adj[t, u] = True
                w[t, u] = (threshold_min - time) / threshold_min
    probs = rng.random(m)
    meta = {"family": "RIDESHARE", "threshold_min": threshold_min, "drivers": drivers, "riders": riders, "seed": _seed_meta(seed)}
    return _from_dense(m, n, adj, w, probs, meta)


@dataclass
class BaseGraph:
    """Worker/task payoff graph read from ``worker_id,task_id,payoff`` rows."""

    workers: list[str]
    tasks: list[str]
    payoff: dict[tuple[str, str], float]

    @property
    def max_payoff(self) -> float:
        return max(self.payoff.values(), default=0.0)

    @classmethod
    def load(cls, path) -> "BaseGraph":
        rows = _read_csv(path, ("worker_id", "task_id", "payoff"))
        workers: dict[str, None] = {}
        tasks: dict[str, None] = {}
        payoff = {}
        for i, r in enumerate(rows):
            try:
                val = float(r["payoff"])
            except (TypeError, ValueError) as exc:
                raise GeneratorError(f"{path}: bad payoff on data row {i + 1}") from exc
            if not val >= 0:
                raise GeneratorError(f"{path}: negative payoff on data row {i + 1}")
            workers.setdefault(r["worker_id"])
            tasks.setdefault(r["task_id"])
            payoff[(r["worker_id"], r["task_id"])] = val
        return cls(list(workers), list(tasks), payoff)


def gen_basegraph(base: BaseGraph | str | Path, m: int, n: int, seed) -> Instance:
    """Random node-induced subgraph: ``n`` workers (offline) and ``m`` tasks (online).

    Weights are payoffs divided by the largest payoff in the whole base graph.
    """
    if not isinstance(base, BaseGraph):
        base = BaseGraph.load(base)
    if len(base.workers) < n or len(base.tasks) < m:
        raise GeneratorError(f"base graph has {len(base.workers)} workers and {len(base.tasks)} tasks; need {n} and {m}")
    rng = _rng(seed)
    workers = [base.workers[i] for i in rng.choice(len(base.workers), size=n, replace=False)]
    tasks = [base.tasks[i] for i in rng.choice(len(base.tasks), size=m, replace=False)]
    scale = base.max_payoff or 1.0
    adj = np.zeros((m, n), dtype=bool)
    w = np.zeros((m, n))
    for t, task in enumerate(tasks):
        for u, worker in enumerate(workers):
            val = base.payoff.get((worker, task))
            if val is not None:
                adj[t, u] = True
                w[t, u] = val / scale
    probs = rng.random(m)
    meta = {"family": "BASEGRAPH", "workers": workers, "tasks": tasks, "seed": _seed_meta(seed)}
    return _from_dense(m, n, adj, w, probs, meta)


def add_noise(inst: Instance, rho: float, seed) -> Instance:
    """Perturbed copy: Gaussian noise of scale ``rho`` on every weight and arrival probability.

    Weights are floored at 0 and probabilities clipped to [0, 1]; the edge set
    is unchanged.
    """
    if rho < 0:
        raise GeneratorError("noise level must be non-negative")
    if rho == 0:
        return Instance(inst.n_offline, inst.n_online, inst.edges, inst.arrival_probs, inst.embeddings, dict(inst.meta))
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), "noise")
    w_noise = rng.normal(0.0, rho, size=len(inst.edges))
    p_noise = rng.normal(0.0, rho, size=inst.m)
    edges = tuple((t, u, max(0.0, w + float(z))) for (t, u, w), z in zip(inst.edges, w_noise))
    probs = tuple(float(np.clip(p + z, 0.0, 1.0)) for p, z in zip(inst.arrival_probs, p_noise))
    meta = dict(inst.meta, noise_rho=rho)
    return Instance(inst.n_offline, inst.n_online, edges, probs, inst.embeddings, meta)


# -- configuration -----------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """A graph family with fixed parameters and shape.

    ``params`` keys by family: ER ``p``; BA ``b``; GEOM ``q``; BRGG_THEORY
    ``d``, ``delta``, ``smooth``; RIDESHARE ``road_file``, optional
    ``nodes_file`` and ``threshold_min``; BASEGRAPH ``base_file``.
    """

    family: str
    m: int
    n: int
    params: dict[str, Any] = field(default_factory=dict)

    def problems(self) -> list[str]:
        f, p = self.family, self.params
        out = []
        if f not in FAMILIES:
            return [f"unknown family {f!r}"]
        if self.m < 0 or self.n < 0:
            out.append("negative shape")
        if f == "ER" and not 0 <= p.get("p", -1) <= 1:
            out.append("ER needs p in [0, 1]")
        if f == "BA" and not 0 <= p.get("b", -1) <= self.n:
            out.append("BA needs 0 <= b <= n")
        if f == "GEOM" and not 0 < p.get("q", -1) <= 1:
            out.append("GEOM needs q in (0, 1]")
        if f == "BRGG_THEORY":
            if p.get("delta", 0) <= 0:
                out.append("BRGG_THEORY needs delta > 0")
            smooth = SmoothSpec.from_dict(p.get("smooth"))
            if smooth.kind != "point" and smooth.beta < 1:
                out.append("smooth spec needs beta >= 1")
        if f == "RIDESHARE" and "road_file" not in p:
            out.append("RIDESHARE needs road_file")
        if f == "BASEGRAPH" and "base_file" not in p:
            out.append("BASEGRAPH needs base_file")
        return out

    @property
    def config_id(self) -> str:
        shown = {k: v for k, v in sorted(self.params.items()) if k in ("p", "b", "q", "d", "delta", "threshold_min")}
        inner = ",".join(f"{k}={v}" for k, v in shown.items())
        return f"{self.family}({inner})[{self.n}x{self.m}]"

    def to_dict(self) -> dict:
        return {"family": self.family, "m": self.m, "n": self.n, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        family = str(d.pop("family")).upper()
        m, n = int(d.pop("m")), int(d.pop("n"))
        return cls(family, m, n, d)


_FILE_CACHE: dict[tuple[str, str | None], Any] = {}


def generate(config: GeneratorConfig, seed) -> Instance:
    problems = config.problems()
    if problems:
        raise GeneratorError("; ".join(problems))
    f, p, m, n = config.family, config.params, config.m, config.n
    if f == "ER":
        inst = gen_er(m, n, p["p"], seed)
    elif f == "BA":
        inst = gen_ba(m, n, int(p["b"]), seed)
    elif f == "GEOM":
        inst = gen_geom(m, n, p["q"], seed)
    elif f == "BRGG_THEORY":
        inst = gen_brgg_theory(m, n, int(p.get("d", 2)), p["delta"], SmoothSpec.from_dict(p.get("smooth")), seed)
    elif f == "RIDESHARE":
        key = (str(p["road_file"]), p.get("nodes_file"))
        if key not in _FILE_CACHE:
            _FILE_CACHE[key] = RoadGraph.load(p["road_file"], p.get("nodes_file"))
        inst = gen_rideshare(_FILE_CACHE[key], m, n, p.get("threshold_min", 15.0), seed)
    else:
        key = (str(p["base_file"]), None)
        if key not in _FILE_CACHE:
            _FILE_CACHE[key] = BaseGraph.load(p["base_file"])
        inst = gen_basegraph(_FILE_CACHE[key], m, n, seed)
    return inst
