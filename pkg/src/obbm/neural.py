"""Message-passing value-to-go estimator trained by imitation of the exact DP.

Each matching state becomes a graph whose nodes are the online nodes, the
still-available offline nodes and one artificial skip node. A small
max-aggregation message-passing network predicts one scalar per node; the
prediction on an available neighbour ``u`` of the arriving node estimates the
value of matching to ``u``, and the prediction on the skip node estimates the
value of skipping. Everything is numpy in float64 with hand-written
gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .core import SKIP, Action, Instance, MatchingState, available_neighbors
from .exact_dp import DEFAULT_DP_LIMIT, VtgTable
from .generators import GeneratorConfig, generate
from .rng import stream

FEATURE_VERSION = 1
FEATURES = ("offline", "skip", "current", "arrival", "position", "ratio")
N_FEATURES = len(FEATURES)
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


# -- feature encoding --------------------------------------------------


@dataclass
class FeatureGraph:
    """Attributed graph for one matching state.

    Node order: online nodes ``0..m-1``, then the available offline nodes in
    ascending index (``offline_ids``), then the skip node. ``src``/``dst``
    list every edge in both directions; ``ew`` is the edge weight.
    """

    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    ew: np.ndarray
    n_online: int
    offline_ids: np.ndarray
    current: int

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def skip(self) -> int:
        return self.num_nodes - 1

    def offline_node(self, u: int) -> int:
        """Graph index of original offline node ``u`` (which must be available)."""
        k = int(np.searchsorted(self.offline_ids, u))
        if k >= len(self.offline_ids) or self.offline_ids[k] != u:
            raise KeyError(f"offline node {u} is not in the graph")
        return self.n_online + k


def encode_state(inst: Instance, state: MatchingState) -> FeatureGraph:
    """Feature graph for ``state``; matched offline nodes are left out."""
    m, t = inst.m, state.t
    offline_ids = np.array(state.available_nodes(inst.n), dtype=np.int64)
    k = len(offline_ids)
    V = m + k + 1
    skip = V - 1
    x = np.zeros((V, N_FEATURES))
    x[m : m + k, 0] = 1.0
    x[skip, 1] = 1.0
    x[t, 2] = 1.0
    for i in range(m):
        if i < t:
            x[i, 3] = float(state.history[i]) if i < len(state.history) else 0.0
        elif i == t:
            x[i, 3] = 1.0
        else:
            x[i, 3] = inst.p[i]
        x[i, 4] = (m - i) / m
    x[m:, 3] = 1.0
    x[:, 5] = (m - t) / max(k, 1)

    col = {int(u): m + j for j, u in enumerate(offline_ids)}
    s, d, w = [], [], []
    for on, off, wt in inst.edges:
        j = col.get(off)
        if j is not None:
            s += [on, j]
            d += [j, on]
            w += [wt, wt]
    for on in range(m):
        s += [on, skip]
        d += [skip, on]
        w += [0.0, 0.0]
    return FeatureGraph(
        x,
        np.asarray(s, dtype=np.int64),
        np.asarray(d, dtype=np.int64),
        np.asarray(w, dtype=float),
        m,
        offline_ids,
        t,
    )


def action_mask(inst: Instance, state: MatchingState, fg: FeatureGraph) -> np.ndarray:
    """Nodes whose prediction is a valid action value: skip plus available neighbours."""
    mask = np.zeros(fg.num_nodes, dtype=bool)
    mask[fg.skip] = True
    for u in available_neighbors(inst, state):
        mask[fg.offline_node(u)] = True
    return mask


# -- batching ----------------------------------------------------------


@dataclass
class Batch:
    """Disjoint union of feature graphs, edges sorted by (dst, src)."""

    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    ew: np.ndarray
    starts: np.ndarray
    udst: np.ndarray
    scatter: sp.csr_matrix
    offsets: np.ndarray
    target: np.ndarray | None = None
    mask: np.ndarray | None = None


def collate(graphs: Sequence[FeatureGraph], targets=None, masks=None) -> Batch:
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    x = np.concatenate([g.x for g in graphs])
    src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)])
    dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)])
    ew = np.concatenate([g.ew for g in graphs])
    order = np.lexsort((src, dst))
    src, dst, ew = src[order], dst[order], ew[order]
    if dst.size:
        first = np.concatenate([[True], dst[1:] != dst[:-1]])
        starts = np.flatnonzero(first)
        udst = dst[starts]
    else:
        starts = np.zeros(0, dtype=np.int64)
        udst = np.zeros(0, dtype=np.int64)
    V, E = x.shape[0], src.size
    scatter = sp.csr_matrix((np.ones(E), (src, np.arange(E))), shape=(V, E))
    target = None if targets is None else np.concatenate(targets)
    mask = None if masks is None else np.concatenate(masks)
    return Batch(x, src, dst, ew, starts, udst, scatter, offsets, target, mask)


# -- model -------------------------------------------------------------


@dataclass
class Hyperparams:
    hidden: int = 32
    mp_layers: int = 2
    mlp_layers: int = 2
    batch_size: int = 32
    epochs: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MpLayer:
    """One message-passing round.

    ``proj`` holds ``(Ws, bs, Wd, bd)``, the source and destination input
    projections used when the input width differs from the hidden width;
    ``edge`` is ``(a, c)``, the edge-weight encoder ``w * a + c``; ``mlp``
    is the list of ``(W, b)`` of the update MLP.
    """

    proj: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None
    edge: tuple[np.ndarray, np.ndarray]
    mlp: list[tuple[np.ndarray, np.ndarray]]

    def params(self) -> list[np.ndarray]:
        out = list(self.proj) if self.proj is not None else []
        out += list(self.edge)
        for W, b in self.mlp:
            out += [W, b]
        return out

    def rebuilt(self, it) -> "MpLayer":
        proj = tuple(next(it) for _ in range(4)) if self.proj is not None else None
        edge = (next(it), next(it))
        return MpLayer(proj, edge, [(next(it), next(it)) for _ in self.mlp])


@dataclass
class MpnnModel:
    """Stacked message-passing layers followed by a linear read-out to one scalar per node."""

    layers: list[MpLayer]
    readout: tuple[np.ndarray, np.ndarray]
    hyper: Hyperparams = field(default_factory=Hyperparams)

    @classmethod
    def init(cls, hyper: Hyperparams | None = None, seed: int = 0, in_dim: int = N_FEATURES) -> "MpnnModel":
        """Glorot-uniform weights and zero biases from the ``model-init`` stream."""
        hyper = hyper or Hyperparams()
        rng = stream(seed, "model-init")
        H = hyper.hidden

        def dense(a, b):
            lim = math.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, size=(a, b)), np.zeros(b)

        layers = []
        d = in_dim
        for _ in range(hyper.mp_layers):
            proj = (*dense(d, H), *dense(d, H)) if d != H else None
            edge = (dense(1, H)[0][0], np.zeros(H))
            layers.append(MpLayer(proj, edge, [dense(H, H) for _ in range(hyper.mlp_layers)]))
            d = H
        return cls(layers, dense(d, 1), hyper)

    @property
    def in_dim(self) -> int:
        first = self.layers[0]
        return first.proj[0].shape[0] if first.proj is not None else first.mlp[0][0].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += layer.params()
        return out + list(self.readout)

    def with_params(self, flat: Sequence[np.ndarray]) -> "MpnnModel":
        it = iter(flat)
        layers = [layer.rebuilt(it) for layer in self.layers]
        readout = (next(it), next(it))
        return MpnnModel(layers, readout, self.hyper)

    def copy(self) -> "MpnnModel":
        return self.with_params([p.copy() for p in self.params()])

    # -- checkpoints ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "feature_version": FEATURE_VERSION,
            "features": list(FEATURES),
            "hyper": self.hyper.to_dict(),
            "shapes": [list(p.shape) for p in self.params()],
            "params": [p.ravel().tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MpnnModel":
        if d.get("version") != CHECKPOINT_VERSION or d.get("feature_version") != FEATURE_VERSION:
            raise ValueError("incompatible checkpoint version")
        hyper = Hyperparams(**d["hyper"])
        skeleton = cls.init(hyper, 0, in_dim=len(d["features"]))
        flat = [np.asarray(v, dtype=float).reshape(s) for v, s in zip(d["params"], d["shapes"])]
        if [p.shape for p in flat] != [p.shape for p in skeleton.params()]:
            raise ValueError("checkpoint shapes do not match its hyperparameters")
        return skeleton.with_params(flat)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MpnnModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_batch(g) -> Batch:
    return g if isinstance(g, Batch) else collate([g])


def _forward(model: MpnnModel, b: Batch):
    h = b.x
    E = b.src.size
    caches = []
    for layer in model.layers:
        if layer.proj is not None:
            Ws, bs, Wd, bd = layer.proj
            hs, hd = h @ Ws + bs, h @ Wd + bd
        else:
            hs = hd = h
        a_e, c_e = layer.edge
        pre = hs[b.src] + b.ew[:, None] * a_e + c_e
        msg = np.maximum(pre, 0.0)
        agg = np.zeros(hd.shape)
        win = None
        if E:
            agg[b.udst] = np.maximum.reduceat(msg, b.starts, axis=0)
            # first edge (lowest source id) attaining the max, per node and channel
            idx = np.where(msg == agg[b.dst], np.arange(E)[:, None], E)
            win = np.minimum.reduceat(idx, b.starts, axis=0)
        z = hd + agg
        acts = [z]
        for j, (W, bias) in enumerate(layer.mlp):
            z = z @ W + bias
            if j < len(layer.mlp) - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
        caches.append((h, pre, win, acts))
        h = z
    Wr, br = model.readout
    out = h @ Wr[:, 0] + br[0]
    return out, h, caches


def forward(model: MpnnModel, g: FeatureGraph | Batch) -> np.ndarray:
    """Predicted value for every node."""
    b = _as_batch(g)
    if b.x.shape[1] != model.in_dim:
        raise ValueError(f"feature width {b.x.shape[1]} does not match model input {model.in_dim}")
    return _forward(model, b)[0]


def _backward(model: MpnnModel, b: Batch, dout: np.ndarray, h_last, caches) -> list[np.ndarray]:
    Wr, br = model.readout
    g_readout = [(h_last.T @ dout)[:, None], np.array([dout.sum()])]
    dh = np.outer(dout, Wr[:, 0])
    g_layers = []
    for layer, (h_in, pre, win, acts) in zip(reversed(model.layers), reversed(caches)):
        mlp_grads = []
        dz = dh
        for j in range(len(layer.mlp) - 1, -1, -1):
            W, _ = layer.mlp[j]
            if j < len(layer.mlp) - 1:
                dz = dz * (acts[j + 1] > 0)
            mlp_grads.append((acts[j].T @ dz, dz.sum(axis=0)))
            dz = dz @ W.T
        dhd = dz
        dpre = np.zeros(pre.shape)
        if win is not None:
            cols = np.broadcast_to(np.arange(dz.shape[1]), win.shape)
            dpre[win, cols] = dz[b.udst]
            dpre *= pre > 0
        g_edge = [b.ew @ dpre, dpre.sum(axis=0)]
        dhs = b.scatter @ dpre
        grads: list[np.ndarray] = []
        if layer.proj is not None:
            Ws, _, Wd, _ = layer.proj
            grads += [h_in.T @ dhs, dhs.sum(axis=0), h_in.T @ dhd, dhd.sum(axis=0)]
            dh = dhs @ Ws.T + dhd @ Wd.T
        else:
            dh = dhs + dhd
        grads += g_edge
        for gW, gb in reversed(mlp_grads):
            grads += [gW, gb]
        g_layers.append(grads)
    flat = []
    for grads in reversed(g_layers):
        flat += grads
    return flat + g_readout


def loss_and_grad(model: MpnnModel, batch: Batch) -> tuple[float, list[np.ndarray]]:
    """Masked mean squared error and its gradient with respect to ``model.params()``."""
    out, h, caches = _forward(model, batch)
    mask = batch.mask
    count = int(mask.sum())
    if count == 0:
        return 0.0, [np.zeros_like(p) for p in model.params()]
    err = np.where(mask, out - batch.target, 0.0)
    loss = float(np.sum(err**2) / count)
    dout = 2.0 * err / count
    return loss, _backward(model, batch, dout, h, caches)


def batch_loss(model: MpnnModel, batch: Batch) -> float:
    out = forward(model, batch)
    err = (out - batch.target)[batch.mask]
    return float(np.mean(err**2)) if err.size else 0.0


# -- teacher-forced training data --------------------------------------


@dataclass
class TrainingSample:
    graph: FeatureGraph
    node: int
    target: np.ndarray
    mask: np.ndarray
    instance: int = -1
    state: MatchingState | None = None


def samples_from_instance(inst: Instance, arrivals, table: VtgTable | None = None, instance_id: int = -1) -> list[TrainingSample]:
    """Follow the optimal online algorithm on ``arrivals`` and record every arrived state."""
    table = table or VtgTable(inst)
    out = []
    available = inst.full_mask
    history: list[int] = []
    for t in range(inst.m):
        if arrivals[t]:
            state = MatchingState(available, t, True, tuple(history))
            fg = encode_state(inst, state)
            mask = action_mask(inst, state, fg)
            target = np.zeros(fg.num_nodes)
            skip, matches = table.action_values(state)
            target[fg.skip] = skip
            for u, v in matches.items():
                target[fg.offline_node(u)] = v
            out.append(TrainingSample(fg, t, target, mask, instance_id, state))
            action = table.action(state)
            if not action.is_skip:
                available &= ~(1 << action.offline)
        history.append(int(arrivals[t]))
    return out


def generate_training_set(
    configs: Sequence[GeneratorConfig], count: int, seed: int, dp_limit: int = DEFAULT_DP_LIMIT
) -> list[TrainingSample]:
    """``count`` instances, cycling through ``configs``; one arrival draw per instance."""
    samples = []
    for i in range(count):
        cfg = configs[i % len(configs)]
        inst = generate(cfg, stream(seed, "train-instance", i))
        table = VtgTable(inst, dp_limit)
        a = (stream(seed, "train-arrivals", i).random(inst.m) < inst.p).astype(np.uint8)
        samples += samples_from_instance(inst, a, table, i)
    return samples


def collate_samples(samples: Sequence[TrainingSample]) -> Batch:
    return collate([s.graph for s in samples], [s.target for s in samples], [s.mask for s in samples])


# -- training ----------------------------------------------------------


@dataclass
class TrainResult:
    model: MpnnModel
    epoch_losses: list[float]
    initial_loss: float
    final_loss: float


def train(model: MpnnModel, samples: Sequence[TrainingSample], hyper: Hyperparams | None = None, seed: int = 0) -> TrainResult:
    """Minibatch Adam on the masked MSE; the shuffle order is fixed by ``seed``."""
    if not samples:
        raise ValueError("no training samples")
    hyper = hyper or model.hyper
    model = model.copy()
    model.hyper = hyper
    full = collate_samples(samples)
    initial = batch_loss(model, full)
    params = model.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    epoch_losses = []
    for epoch in range(hyper.epochs):
        order = stream(seed, "shuffle", epoch).permutation(len(samples))
        total, seen = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            batch = collate_samples([samples[i] for i in idx])
            loss, grads = loss_and_grad(model, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            step += 1
            c1 = 1.0 - hyper.beta1**step
            c2 = 1.0 - hyper.beta2**step
            for p, g, a, v in zip(params, grads, m1, m2):
                a *= hyper.beta1
                a += (1.0 - hyper.beta1) * g
                v *= hyper.beta2
                v += (1.0 - hyper.beta2) * g * g
                p -= hyper.lr * (a / c1) / (np.sqrt(v / c2) + hyper.eps)
            total += loss * len(idx)
            seen += len(idx)
        epoch_losses.append(total / seen)
    final = batch_loss(model, full)
    if not math.isfinite(final):
        raise TrainingDiverged(f"final loss is {final}")
    return TrainResult(model, epoch_losses, initial, final)


# -- policy ------------------------------------------------------------


def select_action(inst: Instance, state: MatchingState, fg: FeatureGraph, values: np.ndarray) -> Action:
    """Argmax over skip and available neighbours; ties go to skip, then the lowest index."""
    best = values[fg.skip]
    choice = SKIP
    for u in available_neighbors(inst, state):
        v = values[fg.offline_node(u)]
        if v > best:
            best, choice = v, Action.match(u)
    return choice


def neural_action(model: MpnnModel, inst: Instance, state: MatchingState) -> Action:
    fg = encode_state(inst, state)
    if not available_neighbors(inst, state):
        return SKIP
    return select_action(inst, state, fg, forward(model, fg))


class NeuralPolicy:
    def __init__(self, model: MpnnModel, name: str = "neural"):
        self.model = model
        self.name = name

    def bind(self, inst, rng=None):
        return lambda state: neural_action(self.model, inst, state)
