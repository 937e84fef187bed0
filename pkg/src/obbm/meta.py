"""Per-instance choice between policies tuned for different size regimes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Action, Instance, MatchingState, Policy

DEFAULT_RATIO_THRESHOLD = 1.5
SUMMARY_FEATURES = ("m", "n", "ratio", "density", "mean_weight")


def summary_features(inst: Instance) -> np.ndarray:
    """Online count, offline count, their ratio, edge density and mean edge weight."""
    m, n = inst.m, inst.n
    k = len(inst.edges)
    mean_w = float(np.mean([w for _, _, w in inst.edges])) if k else 0.0
    return np.array([m, n, m / n, k / (m * n), mean_w], dtype=float)


@dataclass(frozen=True)
class ThresholdSelector:
    """Use ``policy_hi`` iff online/offline exceeds ``ratio_thr``."""

    ratio_thr: float = DEFAULT_RATIO_THRESHOLD
    policy_lo: str = "offline-heavy"
    policy_hi: str = "online-heavy"

    def __post_init__(self):
        if not self.ratio_thr > 0:
            raise ValueError("ratio threshold must be positive")

    def choose(self, inst: Instance) -> str:
        return self.policy_hi if inst.m / inst.n > self.ratio_thr else self.policy_lo

    def to_dict(self) -> dict:
        return {"kind": "threshold", "ratio_thr": self.ratio_thr, "policy_lo": self.policy_lo, "policy_hi": self.policy_hi}


@dataclass(frozen=True)
class RegressorSelector:
    """A linear model per candidate predicting its competitive ratio; picks the argmax.

    ``coef[label]`` has an intercept followed by one weight per summary feature.
    Ties go to the candidate listed first.
    """

    candidates: tuple[str, ...]
    coef: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def predict(self, inst: Instance) -> dict[str, float]:
        x = np.concatenate([[1.0], summary_features(inst)])
        return {c: float(x @ np.asarray(self.coef[c])) for c in self.candidates}

    def choose(self, inst: Instance) -> str:
        pred = self.predict(inst)
        return max(self.candidates, key=lambda c: (pred[c], -self.candidates.index(c)))

    @classmethod
    def fit(cls, instances: Sequence[Instance], scores: Mapping[str, Sequence[float]], ridge: float = 1e-8) -> "RegressorSelector":
        """Least squares per candidate on recorded per-instance ratios (``None`` entries dropped)."""
        X = np.array([np.concatenate([[1.0], summary_features(i)]) for i in instances])
        coef = {}
        for label, ys in scores.items():
            keep = np.array([y is not None for y in ys])
            if not keep.any():
                raise ValueError(f"no defined ratios for {label!r}")
            Xk = X[keep]
            y = np.array([v for v in ys if v is not None], dtype=float)
            A = Xk.T @ Xk + ridge * np.eye(X.shape[1])
            coef[label] = tuple(float(c) for c in np.linalg.solve(A, Xk.T @ y))
        return cls(tuple(scores), coef)

    def to_dict(self) -> dict:
        return {"kind": "regressor", "candidates": list(self.candidates), "coef": {k: list(v) for k, v in self.coef.items()}, "features": list(SUMMARY_FEATURES)}


MetaSelector = ThresholdSelector | RegressorSelector


def selector_from_dict(d: dict) -> MetaSelector:
    kind = d.get("kind", "threshold")
    if kind == "threshold":
        return ThresholdSelector(float(d.get("ratio_thr", DEFAULT_RATIO_THRESHOLD)), d.get("policy_lo", "offline-heavy"), d.get("policy_hi", "online-heavy"))
    if kind == "regressor":
        return RegressorSelector(tuple(d["candidates"]), {k: tuple(v) for k, v in d["coef"].items()})
    raise ValueError(f"unknown selector kind {kind!r}")


def meta_action(selector: MetaSelector, inst: Instance, state: MatchingState, models: Mapping[str, Policy], rng=None) -> Action:
    """One decision by the policy the selector picks for ``inst``."""
    return models[selector.choose(inst)].bind(inst, rng if rng is not None else np.random.default_rng(0))(state)


class MetaPolicy:
    """Picks one policy per instance and follows it for the whole episode."""

    name = "meta"

    def __init__(self, selector: MetaSelector, models: Mapping[str, Policy]):
        self.selector = selector
        self.models = dict(models)

    def bind(self, inst: Instance, rng):
        return self.models[self.selector.choose(inst)].bind(inst, rng)
