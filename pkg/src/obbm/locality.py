"""Random shifted grid partitions and the statistical checks built on them.

A ``(k, s)``-partition cuts every axis of ``[0, 1]^d`` into ``k`` cells of
width ``1/k`` starting at offset ``s_i``, wrapping around modulo 1, so the
last and first slivers of an axis form one cell. Removing every edge whose
endpoints land in different cells splits a geometric instance into small
components whose value-to-go can be computed exactly and summed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import Instance
from .exact_dp import DEFAULT_DP_LIMIT, VtgTable, edge_contributions
from .generators import SmoothSpec, gen_brgg_theory
from .rng import derive_seed, stream


class LocalityError(ValueError):
    pass


class ComponentTooLarge(LocalityError):
    pass


@dataclass(frozen=True)
class Partition:
    k: int
    d: int
    s: tuple[float, ...]

    def __post_init__(self):
        if self.k < 1:
            raise LocalityError("k must be at least 1")
        if len(self.s) != self.d:
            raise LocalityError(f"shift has {len(self.s)} coordinates, expected {self.d}")
        if any(not 0.0 <= x <= 1.0 / self.k for x in self.s):
            raise LocalityError("shift coordinates must lie in [0, 1/k]")

    def boundaries(self, axis: int = 0) -> list[float]:
        """Cell boundaries on one axis, in ``[0, 1)``."""
        return sorted((self.s[axis] + j / self.k) % 1.0 for j in range(self.k))


def sample_partition(k: int, d: int, seed) -> Partition:
    """Draw the shift uniformly from ``[0, 1/k]^d``."""
    if k < 1:
        raise LocalityError("k must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "partition")
    return Partition(k, d, tuple(float(x) for x in rng.random(d) / k))


def cell_index(part: Partition, x) -> np.ndarray:
    """Per-axis cell of a point (shape ``(d,)``) or of each row of an array."""
    x = np.asarray(x, dtype=float)
    idx = np.floor(np.mod(x - np.asarray(part.s), 1.0) * part.k).astype(np.int64)
    return np.minimum(idx, part.k - 1)


def derived_k(eps: float, d: int, delta: float) -> int:
    """Cells per axis so that a pair within distance ``delta`` is cut with probability at most ``eps``."""
    if not 0 < eps <= 1 or delta <= 0 or d < 1:
        raise LocalityError("need 0 < eps <= 1, delta > 0, d >= 1")
    return max(1, math.ceil(eps / (2 * d * delta) - 1e-12))


@dataclass
class DecomposedGraph:
    source: Instance
    partition: Partition
    edges: tuple[tuple[int, int, float], ...]
    components: list[tuple[tuple[int, ...], tuple[int, ...]]]

    def instance(self) -> Instance:
        """The surviving graph as an instance with the original node ids."""
        return Instance(self.source.n_offline, self.source.n_online, self.edges, self.source.arrival_probs)


def decompose(inst: Instance, part: Partition) -> DecomposedGraph:
    """Drop cross-cell edges and split the rest into connected components.

    Components are ``(online ids, offline ids)``, both ascending; nodes left
    without edges are omitted since they carry no value.
    """
    emb = inst.embedding_array
    if emb is None:
        raise LocalityError("instance has no embeddings")
    if emb.shape[1] != part.d:
        raise LocalityError(f"embedding dimension {emb.shape[1]} != partition dimension {part.d}")
    cells = cell_index(part, emb)
    m = inst.m
    same = [bool(np.array_equal(cells[t], cells[m + u])) for t, u, _ in inst.edges]
    kept = tuple(e for e, ok in zip(inst.edges, same) if ok)

    parent = list(range(inst.m + inst.n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for t, u, _ in kept:
        ra, rb = find(t), find(m + u)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, tuple[set, set]] = {}
    for t, u, _ in kept:
        g = groups.setdefault(find(t), (set(), set()))
        g[0].add(t)
        g[1].add(u)
    comps = [(tuple(sorted(on)), tuple(sorted(off))) for _, (on, off) in sorted(groups.items())]
    return DecomposedGraph(inst, part, kept, comps)


def component_instance(decomp: DecomposedGraph, comp) -> Instance:
    """One component as a standalone instance, online order preserved."""
    online, offline = comp
    t_map = {t: i for i, t in enumerate(online)}
    u_map = {u: j for j, u in enumerate(offline)}
    edges = tuple((t_map[t], u_map[u], w) for t, u, w in decomp.edges if t in t_map)
    probs = tuple(decomp.source.arrival_probs[t] for t in online)
    return Instance(len(offline), len(online), edges, probs)


def component_vtg(decomp: DecomposedGraph, dp_limit: int = DEFAULT_DP_LIMIT, cache: dict | None = None) -> float:
    """Sum of exact component values, which equals the value of the whole decomposed graph."""
    total = 0.0
    for comp in decomp.components:
        if len(comp[1]) > dp_limit:
            raise ComponentTooLarge(f"component with {len(comp[1])} offline nodes exceeds dp_limit={dp_limit}")
        sub = component_instance(decomp, comp)
        key = (sub.edges, sub.arrival_probs)
        if cache is not None and key in cache:
            val = cache[key]
        else:
            val = VtgTable(sub, dp_limit).total
            if cache is not None:
                cache[key] = val
        total += val
    return total


@dataclass(frozen=True)
class LocalityParams:
    """Accuracy ``eps``, failure probability ``delta``, sample count ``ell`` and edge length ``dist``."""

    eps: float
    delta: float
    ell: int
    dist: float
    d: int

    def __post_init__(self):
        if not 0 < self.eps <= 0.5:
            raise LocalityError("eps must lie in (0, 1/2]")
        if not 0 < self.delta <= 1:
            raise LocalityError("delta must lie in (0, 1]")
        if self.ell < 1:
            raise LocalityError("ell must be at least 1")

    @property
    def k(self) -> int:
        return derived_k(self.eps, self.d, self.dist)

    @staticmethod
    def min_samples(eps: float, delta: float) -> int:
        """Samples that make the Hoeffding deviation at most ``eps`` with probability ``1 - delta``."""
        return math.ceil(2.0 / eps**2 * math.log(4.0 / delta))

    @property
    def certifiable(self) -> bool:
        return self.ell >= self.min_samples(self.eps, self.delta)

    @staticmethod
    def radius(n_nodes: int, beta: float) -> int:
        """Load bound used as the locality radius: ``3 beta ln N / ln ln N``."""
        return math.ceil(load_bound(n_nodes, beta))


@dataclass
class LocalEstimate:
    estimate: float
    values: list[float]
    max_component: int
    skipped: int


def mc_local_estimate(inst: Instance, params: LocalityParams, seed, dp_limit: int = DEFAULT_DP_LIMIT) -> LocalEstimate:
    """Average decomposed value over ``params.ell`` random partitions.

    Samples with a component over ``dp_limit`` are skipped and counted.
    """
    if inst.embedding_array is None:
        raise LocalityError("instance has no embeddings")
    values, skipped, biggest = [], 0, 0
    cache: dict = {}
    for i in range(params.ell):
        dg = decompose(inst, sample_partition(params.k, params.d, stream(seed, "partition", i)))
        biggest = max([biggest] + [len(c[0]) + len(c[1]) for c in dg.components])
        try:
            values.append(component_vtg(dg, dp_limit, cache))
        except ComponentTooLarge:
            skipped += 1
    est = float(np.mean(values)) if values else float("nan")
    return LocalEstimate(est, values, biggest, skipped)


# -- verifiers ---------------------------------------------------------


@dataclass
class LemmaReport:
    lemma: str
    params: dict
    trials: int
    statistic: float
    bound: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "lemma": self.lemma,
            "params": self.params,
            "trials": self.trials,
            "statistic": self.statistic,
            "bound": self.bound,
            "pass": self.passed,
        }
        if self.details:
            out["details"] = self.details
        return out


def _binom_sigma(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / trials)


def cut_rate(k: int, d: int, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> float:
    """Fraction of pairs ``(x[i], y[i])`` separated by independent random partitions."""
    s = rng.random((len(x), d)) / k
    cx = np.floor(np.mod(x - s, 1.0) * k)
    cy = np.floor(np.mod(y - s, 1.0) * k)
    return float(np.mean(np.any(cx != cy, axis=1)))


def verify_cut_probability(dist: float, d: int, eps: float, trials: int, seed) -> LemmaReport:
    """Separation rate of point pairs at l-infinity distance ``dist``.

    Each pair is offset by exactly ``dist`` on every axis (random signs),
    the worst case for a partition with ``k = ceil(eps / (2 d dist))``.
    In one dimension the rate is also compared with the exact value ``k dist``.
    """
    if dist <= 0 or dist > eps / (2 * d) + 1e-12:
        raise LocalityError("need 0 < dist <= eps / (2d)")
    k = derived_k(eps, d, dist)
    rng = stream(seed, "cut")
    x = dist + rng.random((trials, d)) * (1 - 2 * dist)
    y = x + dist * rng.choice([-1.0, 1.0], size=(trials, d))
    rate = cut_rate(k, d, x, y, rng)
    sigma = _binom_sigma(eps, trials)
    passed = rate <= eps + 3 * sigma
    details: dict = {"k": k, "sigma": sigma}
    if d == 1:
        exact = k * dist
        tol = 3 * _binom_sigma(exact, trials)
        details.update(closed_form=exact, closed_form_tol=tol, closed_form_pass=abs(rate - exact) <= tol)
        passed = passed and details["closed_form_pass"]
    params = {"dist": dist, "d": d, "eps": eps}
    return LemmaReport("pair-separation", params, trials, rate, eps + 3 * sigma, bool(passed), details)


def load_bound(n_points: int, beta: float) -> float:
    """``3 beta ln N / ln ln N``; infinite below N = 3 where it is undefined."""
    if n_points < 3:
        return math.inf
    return 3.0 * beta * math.log(n_points) / math.log(math.log(n_points))


def max_loads(n_points: int, d: int, k: int, smooth: SmoothSpec, trials: int, seed, batch: int = 64) -> np.ndarray:
    """Largest cell occupancy of ``n_points`` samples in each of ``trials`` random partitions."""
    out = np.empty(trials, dtype=np.int64)
    rng = stream(seed, "max-load")
    strides = k ** np.arange(d, dtype=np.int64)
    for start in range(0, trials, batch):
        b = min(batch, trials - start)
        pts = smooth.sample(rng, b * n_points, d).reshape(b, n_points, d)
        s = rng.random((b, 1, d)) / k
        cells = np.minimum(np.floor(np.mod(pts - s, 1.0) * k).astype(np.int64), k - 1)
        flat = (cells * strides).sum(axis=2) + (np.arange(b, dtype=np.int64) * k**d)[:, None]
        counts = np.bincount(flat.ravel(), minlength=b * k**d).reshape(b, -1)
        out[start : start + b] = counts.max(axis=1)
    return out


def verify_max_load(n_points: int, d: int, k: int, smooth: SmoothSpec, trials: int, seed, c: float = 10.0) -> LemmaReport:
    """Rate at which the fullest cell exceeds ``3 beta ln N / ln ln N``; passes if at most ``c / N``.

    The details carry the occupancy histogram and the empirical constant
    (largest observed load divided by ``beta ln N / ln ln N``).
    """
    if k**d < n_points:
        raise LocalityError("need k^d >= N")
    loads = max_loads(n_points, d, k, smooth, trials, seed)
    beta = smooth.beta
    bound = load_bound(n_points, beta)
    rate = float(np.mean(loads > bound))
    vals, counts = np.unique(loads, return_counts=True)
    details = {
        "histogram": {str(int(v)): int(c_) for v, c_ in zip(vals, counts)},
        "load_bound": bound,
        "beta": beta,
    }
    if n_points >= 3 and math.isfinite(beta):
        details["empirical_constant"] = float(loads.max() / (beta * math.log(n_points) / math.log(math.log(n_points))))
    params = {"N": n_points, "d": d, "k": k, "smooth": smooth.to_dict()}
    return LemmaReport("max-load", params, trials, rate, c / n_points, bool(rate <= c / n_points), details)


def verify_vtg_sandwich(inst: Instance, eps: float, trials: int, seed, dist: float | None = None) -> LemmaReport:
    """Per-sample upper and edge-sum lower bounds, plus the mean lower bound.

    For every sampled partition: value(G(pi)) <= value(G), and
    value(G(pi)) >= sum of alpha_e w_e over surviving edges. Over all
    samples: mean >= (1 - eps) value(G) - 3 standard errors. ``dist``
    defaults to the generator's edge length stored in the instance meta.
    """
    if inst.m > 10:
        raise LocalityError("sandwich check limited to m <= 10")
    emb = inst.embedding_array
    if emb is None:
        raise LocalityError("instance has no embeddings")
    if dist is None:
        dist = float(inst.meta["delta"])
    d = emb.shape[1]
    k = derived_k(eps, d, dist)
    full = VtgTable(inst).total
    alpha = {(c.online, c.offline): c.value for c in edge_contributions(inst)}
    upper_viol = lower_viol = 0
    values = []
    cache: dict = {}
    for i in range(trials):
        dg = decompose(inst, sample_partition(k, d, stream(seed, "partition", i)))
        v = component_vtg(dg, cache=cache)
        values.append(v)
        if v > full + 1e-9:
            upper_viol += 1
        if v < sum(alpha.get((t, u), 0.0) for t, u, _ in dg.edges) - 1e-9:
            lower_viol += 1
    vals = np.array(values)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    bound = (1 - eps) * full - 3 * se
    passed = upper_viol == 0 and lower_viol == 0 and mean >= bound
    details = {"k": k, "full_value": full, "stderr": se, "upper_violations": upper_viol, "edge_sum_violations": lower_viol, "min": float(vals.min())}
    return LemmaReport("vtg-sandwich", {"eps": eps, "dist": dist, "d": d, "m": inst.m, "n": inst.n}, trials, mean, bound, bool(passed), details)


def verify_local_approx(
    m: int,
    n: int,
    d: int,
    dist: float,
    eps: float,
    delta: float,
    draws: int,
    seed,
    smooth: SmoothSpec | None = None,
    ell: int | None = None,
) -> LemmaReport:
    """Rate at which the sampled estimate falls below ``(1 - eps)^2`` of the true value.

    Each draw is a fresh geometric instance and a fresh set of ``ell``
    partitions (default: the Hoeffding sample count). Passes if the rate is
    at most ``delta`` plus three binomial standard deviations.
    """
    params = LocalityParams(eps, delta, ell or LocalityParams.min_samples(eps, delta), dist, d)
    failures = skipped = 0
    for j in range(draws):
        inst = gen_brgg_theory(m, n, d, dist, smooth, derive_seed(seed, "instance", j))
        full = VtgTable(inst).total
        est = mc_local_estimate(inst, params, derive_seed(seed, "samples", j))
        skipped += est.skipped
        if est.values and est.estimate < (1 - eps) ** 2 * full - 1e-12:
            failures += 1
    rate = failures / draws
    bound = delta + 3 * _binom_sigma(delta, draws)
    info = {"m": m, "n": n, "d": d, "dist": dist, "eps": eps, "delta": delta, "ell": params.ell, "k": params.k}
    return LemmaReport("local-approximation", info, draws, rate, bound, bool(rate <= bound), {"skipped_samples": skipped})
