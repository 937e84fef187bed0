"""Episode simulation, competitive ratios and benchmark sweeps.

Seeding: the run seed and the (configuration, instance) position give a
64-bit instance seed; the instance, its arrival draws, its noise and each
policy's coins are separate streams under that seed. Adding a policy or a
configuration therefore never changes any other cell of the grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baselines import GreedyPolicy, GreedyThresholdPolicy, LpRoundPolicy, SkipPolicy
from .core import Instance, Policy, check_action, run_episode
from .exact_dp import OptOnPolicy
from .generators import GeneratorConfig, add_noise, generate
from .offline_opt import max_weight_matching, realize
from .rng import derive_seed, stream

CSV_COLUMNS = ("config_id", "family", "params", "m", "n", "policy", "instance_seed", "trial", "matched_weight", "offline_opt", "cr")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class BenchConfigError(ValueError):
    pass


@dataclass
class EpisodeResult:
    instance_id: Any
    policy: str
    trial: int
    arrivals: tuple[int, ...]
    matching: list[tuple[int, int]]
    matched_weight: float
    offline_opt: float

    @property
    def cr(self) -> float | None:
        """Ratio to the offline optimum; ``None`` when the optimum is zero."""
        if self.offline_opt <= 0:
            return None
        return self.matched_weight / self.offline_opt


def simulate_episode(
    inst: Instance,
    policy: Policy,
    a: Sequence[int],
    rng: np.random.Generator | None = None,
    observed: Instance | None = None,
    offline_opt: float | None = None,
    instance_id: Any = None,
    trial: int = 0,
) -> EpisodeResult:
    """Run ``policy`` on arrival vector ``a``.

    The policy sees ``observed`` (a noisy copy, say) when given; legality
    and weights always come from ``inst``. Every action is checked.
    """
    seen = observed if observed is not None else inst
    decide = policy.bind(seen, rng if rng is not None else np.random.default_rng(0))

    def checked(state):
        action = decide(state)
        check_action(inst, state, action)
        return action

    matching = run_episode(inst, checked, a, check=False)
    weight = float(sum(inst.weights[t, u] for t, u in matching))
    if offline_opt is None:
        offline_opt = max_weight_matching(realize(inst, a))[1]
    return EpisodeResult(instance_id, policy.name, trial, tuple(int(x) for x in a), matching, weight, float(offline_opt))


def trial_arrivals(inst: Instance, instance_seed: int, trial: int) -> np.ndarray:
    return (stream(instance_seed, "arrivals", trial).random(inst.m) < inst.p).astype(np.uint8)


def policy_stream(instance_seed: int, policy: Policy, trial: int) -> np.random.Generator:
    return stream(instance_seed, "policy", policy.name, trial)


def competitive_ratio(inst: Instance, policy: Policy, ell: int, seed: int, observed: Instance | None = None) -> float | None:
    """Mean ratio to the offline optimum over ``ell`` arrival draws.

    Draws whose offline optimum is zero are left out; ``None`` when all are.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    ratios = []
    for j in range(ell):
        a = trial_arrivals(inst, seed, j)
        res = simulate_episode(inst, policy, a, policy_stream(seed, policy, j), observed)
        if res.cr is not None:
            ratios.append(res.cr)
    return float(np.mean(ratios)) if ratios else None


# -- grids -------------------------------------------------------------


@dataclass
class InstanceRecord:
    config_index: int
    config: GeneratorConfig | None
    instance_index: int
    instance_seed: int
    instance: Instance


def resolve_instances(spec: Sequence, seed: int) -> list[InstanceRecord]:
    """Turn ``(GeneratorConfig, count)`` pairs and bare instances into records."""
    out = []
    for ci, item in enumerate(spec):
        if isinstance(item, Instance):
            out.append(InstanceRecord(ci, None, 0, derive_seed(seed, "instance", ci, 0), item))
            continue
        cfg, count = item
        for i in range(count):
            s = derive_seed(seed, "instance", ci, i)
            out.append(InstanceRecord(ci, cfg, i, s, generate(cfg, s)))
    return out


def _instance_rows(rec: InstanceRecord, policies: Sequence[Policy], ell: int, rho: float = 0.0) -> list[list[EpisodeResult]]:
    inst = rec.instance
    observed = None
    if rho > 0:
        observed = add_noise(inst, rho, stream(rec.instance_seed, "noise", repr(float(rho))))
    per_policy: list[list[EpisodeResult]] = [[] for _ in policies]
    for j in range(ell):
        a = trial_arrivals(inst, rec.instance_seed, j)
        opt = max_weight_matching(realize(inst, a))[1]
        for k, pol in enumerate(policies):
            per_policy[k].append(
                simulate_episode(inst, pol, a, policy_stream(rec.instance_seed, pol, j), observed, opt, rec.instance_seed, j)
            )
    return per_policy


def _run_chunk(args):
    recs, policies, ell, rho = args
    return [_instance_rows(r, policies, ell, rho) for r in recs]


def run_grid(records: Sequence[InstanceRecord], policies: Sequence[Policy], ell: int, jobs: int = 1, rho: float = 0.0):
    """Episodes for every (instance, policy, trial), in input order regardless of ``jobs``."""
    if jobs <= 1 or len(records) <= 1:
        return [_instance_rows(r, policies, ell, rho) for r in records]
    size = max(1, math.ceil(len(records) / (jobs * 4)))
    chunks = [records[i : i + size] for i in range(0, len(records), size)]
    out = []
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        for part in ex.map(_run_chunk, [(c, list(policies), ell, rho) for c in chunks]):
            out.extend(part)
    return out


def instance_cr(results: Sequence[EpisodeResult]) -> float | None:
    vals = [r.cr for r in results if r.cr is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_grid(records, policies, ell: int, seed: int = 0, jobs: int = 1) -> list[list[float | None]]:
    """Per-policy list of per-instance competitive ratios."""
    if records and not isinstance(records[0], InstanceRecord):
        records = resolve_instances(records, seed)
    grid = run_grid(records, policies, ell, jobs)
    return [[instance_cr(rows[k]) for rows in grid] for k in range(len(policies))]


# -- policies by name --------------------------------------------------


def make_policy(spec: dict | str) -> Policy:
    """Build a policy from ``{"name": ..., ...}``.

    Names: ``greedy``, ``greedy-t`` (``thr``), ``lp-round``, ``opt-on``,
    ``skip``, ``neural`` (``checkpoint``), ``meta`` (``selector`` plus
    ``models``: a ``{label: checkpoint}`` map).
    """
    if isinstance(spec, str):
        spec = {"name": spec}
    name = spec.get("name")
    label = spec.get("label")
    if name == "greedy":
        pol = GreedyPolicy()
    elif name == "greedy-t":
        if "thr" not in spec:
            raise BenchConfigError("greedy-t needs thr")
        pol = GreedyThresholdPolicy(float(spec["thr"]))
    elif name == "lp-round":
        pol = LpRoundPolicy(spec.get("zero_prob", "skip"))
    elif name == "opt-on":
        pol = OptOnPolicy(int(spec.get("dp_limit", 20)))
    elif name == "skip":
        pol = SkipPolicy()
    elif name == "neural":
        from .neural import MpnnModel, NeuralPolicy

        if "checkpoint" not in spec:
            raise BenchConfigError("neural needs checkpoint")
        pol = NeuralPolicy(MpnnModel.load(spec["checkpoint"]))
    elif name == "meta":
        from .meta import MetaPolicy, selector_from_dict

        models = {k: make_policy(v if isinstance(v, dict) else {"name": "neural", "checkpoint": v}) for k, v in spec.get("models", {}).items()}
        pol = MetaPolicy(selector_from_dict(spec["selector"]), models)
    else:
        raise BenchConfigError(f"unknown policy {name!r}")
    if label:
        pol.name = label
    return pol


# -- benchmark runs ----------------------------------------------------


@dataclass
class BenchConfig:
    seed: int = 0
    ell: int = 5
    instances_per_config: int = 500
    configs: list[GeneratorConfig] = field(default_factory=list)
    policies: list[dict] = field(default_factory=list)
    noise: list[float] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        try:
            cfg = cls(
                seed=int(d.get("seed", 0)),
                ell=int(d.get("ell", 5)),
                instances_per_config=int(d.get("instances_per_config", 500)),
                configs=[GeneratorConfig.from_dict(c) for c in d.get("configs", [])],
                policies=[p if isinstance(p, dict) else {"name": p} for p in d.get("policies", [])],
                noise=[float(r) for r in d.get("noise", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BenchConfigError(f"bad bench config: {exc}") from exc
        problems = [f"{c.config_id}: {p}" for c in cfg.configs for p in c.problems()]
        if cfg.ell < 1:
            problems.append("ell must be >= 1")
        if any(r < 0 for r in cfg.noise):
            problems.append("noise levels must be >= 0")
        if problems:
            raise BenchConfigError("; ".join(problems))
        return cfg

    @classmethod
    def load(cls, path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ell": self.ell,
            "instances_per_config": self.instances_per_config,
            "configs": [c.to_dict() for c in self.configs],
            "policies": self.policies,
            "noise": self.noise,
        }


@dataclass
class BenchReport:
    rows: list[dict]
    summary: list[dict]
    config: dict
    metadata: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"config": self.config, "metadata": self.metadata, "summary": self.summary}

    def write(self, out_dir, stem: str = "bench") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        json_path = out / f"{stem}.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    def mean_cr(self, config_id: str, policy: str) -> float | None:
        for s in self.summary:
            if s["config_id"] == config_id and s["policy"] == policy:
                return s["mean_cr"]
        raise KeyError((config_id, policy))


def _fmt(x: float) -> str:
    return repr(float(x))


def git_describe() -> str | None:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return res.stdout.strip() or None


def summarize(config_id: str, policy: str, crs: Sequence[float | None], ell: int) -> dict:
    vals = np.array([c for c in crs if c is not None], dtype=float)
    summary = {
        "config_id": config_id,
        "policy": policy,
        "instances": int(vals.size),
        "undefined_instances": int(len(crs) - vals.size),
        "ell": ell,
        "mean_cr": float(vals.mean()) if vals.size else None,
        "std_cr": float(vals.std(ddof=1)) if vals.size > 1 else None,
        "quantiles": {str(q): float(np.quantile(vals, q)) for q in QUANTILES} if vals.size else {},
    }
    return summary


def bench(config: BenchConfig | dict, jobs: int = 1, rho: float = 0.0, policies: Sequence[Policy] | None = None) -> BenchReport:
    """Run every configuration against every policy.

    Rows come out ordered by configuration, instance, policy and trial, so
    the CSV is identical for any ``jobs``.
    """
    if isinstance(config, dict):
        config = BenchConfig.from_dict(config)
    if policies is None:
        policies = [make_policy(p) for p in config.policies]
    spec = [(c, config.instances_per_config) for c in config.configs]
    rows: list[dict] = []
    summary: list[dict] = []
    if policies:
        records = resolve_instances(spec, config.seed)
        grid = run_grid(records, policies, config.ell, jobs, rho)
        per_config: dict[int, list[list[float | None]]] = {}
        for rec, per_policy in zip(records, grid):
            cfg = rec.config
            params = json.dumps({k: v for k, v in sorted(cfg.params.items())}, sort_keys=True, separators=(",", ":"))
            crs = per_config.setdefault(rec.config_index, [[] for _ in policies])
            for k, results in enumerate(per_policy):
                crs[k].append(instance_cr(results))
                for r in results:
                    rows.append(
                        {
                            "config_id": cfg.config_id,
                            "family": cfg.family,
                            "params": params,
                            "m": cfg.m,
                            "n": cfg.n,
                            "policy": policies[k].name,
                            "instance_seed": rec.instance_seed,
                            "trial": r.trial,
                            "matched_weight": _fmt(r.matched_weight),
                            "offline_opt": _fmt(r.offline_opt),
                            "cr": "" if r.cr is None else _fmt(r.cr),
                        }
                    )
        for ci, crs in sorted(per_config.items()):
            for k, pol in enumerate(policies):
                summary.append(summarize(config.configs[ci].config_id, pol.name, crs[k], config.ell))
    for s in summary:
        if s["mean_cr"] is not None and not (0.0 <= s["quantiles"]["0.95"] <= 1.0 + 1e-9):
            raise AssertionError(f"competitive ratio out of range in {s['config_id']} / {s['policy']}")
    metadata = {"package_version": __version__, "git": git_describe(), "jobs_independent": True, "noise_rho": rho}
    return BenchReport(rows, summary, config.to_dict(), metadata)


def noise_sweep(config: BenchConfig | dict, rhos: Sequence[float] | None = None, jobs: int = 1, retrained: dict | None = None) -> dict[float, BenchReport]:
    """One report per noise level; policies see noisy instances, scoring stays clean.

    ``retrained`` maps a noise level to extra policy specs (models trained on
    inputs with that noise) that are added for that level only.
    """
    if isinstance(config, dict):
        config = BenchConfig.from_dict(config)
    rhos = list(config.noise if rhos is None else rhos)
    out = {}
    for rho in rhos:
        if rho < 0:
            raise ValueError("noise level must be >= 0")
        extra = (retrained or {}).get(rho, [])
        policies = [make_policy(p) for p in config.policies + list(extra)]
        out[rho] = bench(config, jobs=jobs, rho=rho, policies=policies)
    return out
