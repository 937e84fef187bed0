"""Command-line entry point (``obbm <command>``).

Exit status: 0 on success, 1 when a verification or invariant check fails,
2 on bad arguments or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .core import Instance, InstanceError, InvalidActionError, MatchingState, require_valid, sample_arrivals
from .exact_dp import DPLimitError, VtgTable, brute_force_value
from .generators import GeneratorConfig, GeneratorError, SmoothSpec, generate, gen_brgg_theory
from .rng import derive_seed, stream


class UsageError(Exception):
    pass


def _load_json(path) -> Any:
    if path is None:
        raise UsageError("--config is required for this command")
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _emit(obj, args, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def _load_instance(path) -> Instance:
    try:
        return require_valid(Instance.from_json(Path(path).read_text()))
    except OSError as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from exc


# -- commands ------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = GeneratorConfig.from_dict(_load_json(args.config))
    lines = []
    for i in range(args.count):
        inst = generate(cfg, derive_seed(args.seed, "instance", 0, i))
        lines.append(inst.to_json())
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "instances.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_vtg(args) -> int:
    inst = _load_instance(args.instance)
    value = VtgTable(inst, args.dp_limit).total
    out: dict[str, Any] = {"value": value}
    if args.brute:
        brute = brute_force_value(inst)
        out["brute_force"] = brute
        out["agree"] = abs(brute - value) <= 1e-9 * max(1.0, abs(value))
    _emit(out, args, "vtg.json")
    return 0 if out.get("agree", True) else 1


def cmd_simulate(args) -> int:
    from .bench import make_policy, simulate_episode

    inst = _load_instance(args.instance)
    spec: dict[str, Any] = {"name": args.policy}
    if args.checkpoint:
        spec["checkpoint"] = args.checkpoint
    if args.thr is not None:
        spec["thr"] = args.thr
    policy = make_policy(spec)
    episodes = []
    for j in range(args.trials):
        a = sample_arrivals(inst, stream(args.seed, "arrivals", j))
        r = simulate_episode(inst, policy, a, stream(args.seed, "policy", policy.name, j), trial=j)
        episodes.append({"trial": j, "arrivals": list(r.arrivals), "matching": r.matching, "matched_weight": r.matched_weight, "offline_opt": r.offline_opt, "cr": r.cr})
    _emit({"policy": policy.name, "episodes": episodes}, args, "simulate.json")
    return 0


def _bench_config(args):
    from .bench import BenchConfig

    cfg = BenchConfig.from_dict(_load_json(args.config))
    if args.seed_given:
        cfg.seed = args.seed
    return cfg


def _write_report(report, args, stem: str) -> None:
    if args.out:
        report.write(args.out, stem)
    else:
        sys.stdout.write(report.csv_text())
    for s in report.summary:
        mean = "undefined" if s["mean_cr"] is None else f"{s['mean_cr']:.4f}"
        print(f"{s['config_id']}\t{s['policy']}\t{mean}\t({s['instances']} instances)", file=sys.stderr)


def cmd_bench(args) -> int:
    from .bench import bench

    _write_report(bench(_bench_config(args), jobs=args.jobs), args, "bench")
    return 0


def cmd_eval_policy(args) -> int:
    from .bench import BenchConfig, bench

    cfg = _bench_config(args)
    if args.checkpoint:
        cfg = BenchConfig(cfg.seed, cfg.ell, cfg.instances_per_config, cfg.configs, [{"name": "neural", "checkpoint": args.checkpoint}])
    _write_report(bench(cfg, jobs=args.jobs), args, "eval")
    return 0


def cmd_tune_threshold(args) -> int:
    from .baselines import DEFAULT_GRID, tune_threshold

    cfg = _bench_config(args)
    res = tune_threshold([(c, cfg.instances_per_config) for c in cfg.configs], DEFAULT_GRID, cfg.seed, cfg.ell)
    _emit({"thr": res.thr, "scores": {repr(k): v for k, v in res.scores.items()}}, args, "threshold.json")
    return 0


def cmd_verify_locality(args) -> int:
    from .locality import verify_cut_probability, verify_local_approx, verify_max_load, verify_vtg_sandwich

    conf = _load_json(args.config) if args.config else {}
    which = args.lemma
    reports = []
    if which in ("cut", "all"):
        for d in conf.get("dims", [1, 2, 3]):
            for eps in conf.get("eps_list", [0.1, 0.25]):
                reports.append(verify_cut_probability(eps / (4 * d), d, eps, int(conf.get("cut_trials", 100_000)), args.seed))
    if which in ("max-load", "all"):
        n_pts = int(conf.get("N", 4096))
        d = int(conf.get("d", 2))
        k = int(conf.get("k", int(np.ceil(n_pts ** (1 / d)))))
        reports.append(verify_max_load(n_pts, d, k, SmoothSpec.from_dict(conf.get("smooth")), int(conf.get("load_trials", 2000)), args.seed))
    if which in ("sandwich", "all"):
        spec = SmoothSpec.from_dict(conf.get("smooth", {"kind": "boxes", "boxes": [[1.0, [0.4, 0.4], [0.6, 0.6]]]}))
        for i in range(int(conf.get("instances", 10))):
            inst = gen_brgg_theory(6, 6, 2, float(conf.get("dist", 0.06)), spec, stream(args.seed, "sandwich-instance", i))
            reports.append(verify_vtg_sandwich(inst, float(conf.get("eps", 0.25)), int(conf.get("ell", 400)), derive_seed(args.seed, "sandwich", i)))
    if which in ("local-approx", "all"):
        spec = SmoothSpec.from_dict(conf.get("smooth", {"kind": "boxes", "boxes": [[1.0, [0.4, 0.4], [0.6, 0.6]]]}))
        reports.append(verify_local_approx(5, 5, 2, float(conf.get("dist", 0.06)), float(conf.get("eps", 0.25)), float(conf.get("delta", 0.1)), int(conf.get("draws", 500)), args.seed, spec))
    _emit([r.to_dict() for r in reports], args, "locality.json")
    return 0 if all(r.passed for r in reports) else 1


def cmd_train(args) -> int:
    from .neural import Hyperparams, MpnnModel, generate_training_set, train

    conf = _load_json(args.config)
    configs = [GeneratorConfig.from_dict(c) for c in conf["configs"]]
    hyper = Hyperparams(**conf.get("hyper", {}))
    samples = generate_training_set(configs, int(conf.get("instances", 2000)), args.seed)
    res = train(MpnnModel.init(hyper, args.seed), samples, hyper, args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    res.model.save(out / "model.json")
    curve = {"initial_loss": res.initial_loss, "final_loss": res.final_loss, "epoch_losses": res.epoch_losses, "samples": len(samples)}
    (out / "loss_curve.json").write_text(json.dumps(curve, indent=2) + "\n")
    print(json.dumps({k: v for k, v in curve.items() if k != "epoch_losses"}))
    return 0 if res.final_loss < res.initial_loss else 1


def cmd_predict(args) -> int:
    from .neural import MpnnModel, encode_state, forward

    inst = _load_instance(args.instance)
    model = MpnnModel.load(args.checkpoint)
    avail = inst.full_mask if args.available is None else int(args.available, 0)
    state = MatchingState(avail, args.t, True, tuple(args.history or ()))
    fg = encode_state(inst, state)
    values = forward(model, fg)
    out = {"skip": float(values[fg.skip]), "offline": {str(u): float(values[fg.offline_node(u)]) for u in fg.offline_ids}}
    _emit(out, args, "predict.json")
    return 0


def cmd_meta(args) -> int:
    from .bench import BenchConfig, bench

    conf = _load_json(args.config)
    cfg = BenchConfig.from_dict({k: v for k, v in conf.items() if k not in ("selector", "models")})
    if args.seed_given:
        cfg.seed = args.seed
    spec = {"name": "meta", "selector": conf.get("selector", {"kind": "threshold"}), "models": conf["models"]}
    cfg = BenchConfig(cfg.seed, cfg.ell, cfg.instances_per_config, cfg.configs, cfg.policies + [spec])
    _write_report(bench(cfg, jobs=args.jobs), args, "meta")
    return 0


def cmd_noise_sweep(args) -> int:
    from .bench import noise_sweep

    cfg = _bench_config(args)
    raw = _load_json(args.config).get("retrained", {})
    retrained = {float(rho): [p if isinstance(p, dict) else {"name": p} for p in specs] for rho, specs in raw.items()}
    reports = noise_sweep(cfg, jobs=args.jobs, retrained=retrained)
    for rho, rep in reports.items():
        if args.out:
            rep.write(args.out, f"noise_{rho:g}")
        for s in rep.summary:
            mean = "undefined" if s["mean_cr"] is None else f"{s['mean_cr']:.4f}"
            print(f"rho={rho:g}\t{s['config_id']}\t{s['policy']}\t{mean}")
    return 0


# -- parser ----------------------------------------------------------------


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="run seed (default 0)")
    parser.add_argument("--config", default=d(None), help="JSON configuration file")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obbm", description="Online Bayesian bipartite matching tools.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _common(sp, suppress=True)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("generate", cmd_generate, "sample instances from a generator config")
    sp.add_argument("--count", type=int, default=1)
    sp = add("vtg", cmd_vtg, "exact value of an instance")
    sp.add_argument("instance")
    sp.add_argument("--dp-limit", type=int, default=20)
    sp.add_argument("--brute", action="store_true", help="also evaluate the plain recursion")
    sp = add("simulate", cmd_simulate, "run a policy on sampled arrivals")
    sp.add_argument("instance")
    sp.add_argument("--policy", default="greedy")
    sp.add_argument("--checkpoint")
    sp.add_argument("--thr", type=float)
    sp.add_argument("--trials", type=int, default=1)
    add("bench", cmd_bench, "run a benchmark grid")
    add("tune-threshold", cmd_tune_threshold, "grid-search the greedy threshold")
    sp = add("verify-locality", cmd_verify_locality, "statistical checks of the partition machinery")
    sp.add_argument("--lemma", choices=["cut", "max-load", "sandwich", "local-approx", "all"], default="all")
    add("train", cmd_train, "train a message-passing policy")
    sp = add("predict", cmd_predict, "per-node values predicted by a checkpoint")
    sp.add_argument("instance")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--t", type=int, default=0)
    sp.add_argument("--available", help="bitmask of free offline nodes (default all)")
    sp.add_argument("--history", type=int, nargs="*")
    sp = add("eval-policy", cmd_eval_policy, "benchmark one trained checkpoint")
    sp.add_argument("--checkpoint")
    add("meta", cmd_meta, "benchmark the per-instance policy selector")
    add("noise-sweep", cmd_noise_sweep, "benchmark under observation noise")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.fn(args)
    except (AssertionError, InvalidActionError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 1
    except (UsageError, GeneratorError, InstanceError, DPLimitError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
