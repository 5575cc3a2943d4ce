"""Command-line entry point: ``semmec {train,eval,sweep,oracle,freeze}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import InstanceTooLarge, brute_force_best
from .env import FrozenInstance, OffloadingEnv
from .evaluation import METRICS, evaluate_policy
from .harness import (
    METHODS,
    ExperimentSpec,
    as_policy,
    emit_outputs,
    load_config,
    load_model,
    replace_seeds,
    run_experiment,
    train_model,
    write_csv,
)
from .mappo import LOG_COLUMNS
from .validation import ConfigError

log = logging.getLogger("semmec")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _spec(path) -> ExperimentSpec:
    return load_config(path) if path else ExperimentSpec()


def cmd_train(args) -> int:
    spec = _spec(args.config)
    seed = args.seed if args.seed is not None else spec.seeds[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %s (seed %d)", args.method, seed)
    model = train_model(args.method, spec.env, seed, spec.train)
    model.save(out / "model.npz")
    write_csv(out / "train_log.csv", LOG_COLUMNS, getattr(model, "log_", []))
    print(out / "model.npz")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    config = load_config(args.config).env if args.config else model.config_
    seed = args.seed if args.seed is not None else config.seed
    policy = as_policy("mappo_forced_mu1", model) if args.force_mu1 else model
    res = evaluate_policy(policy, config, runs=args.runs, seed=seed)
    row = {k: res[k] for k in METRICS} | {f"{k}_ci": res[f"{k}_ci"] for k in METRICS}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "eval.csv", list(row), [row])
        per_agent = [{"agent": n, "qoe": q} for n, q in enumerate(res["qoe_per_agent"])]
        write_csv(out / "eval_per_agent.csv", ("agent", "qoe"), per_agent)
    print(json.dumps(row | {"qoe_per_agent": res["qoe_per_agent"], "runs": args.runs}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    if args.seed is not None:
        spec = replace_seeds(spec, args.seed)
    overrides = {}
    if args.runs is not None:
        overrides["eval_runs"] = args.runs
    if args.n_jobs is not None:
        overrides["n_jobs"] = args.n_jobs
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    out = Path(args.out or spec.output_dir)
    log.info("sweep over %s: %d points x %d methods x %d seeds", spec.axis, len(spec.values), len(spec.methods), len(spec.seeds))
    result = run_experiment(spec)
    emit_outputs(result, out, checkpoints=not args.no_checkpoints)
    for r in result.rows:
        if r["status"] != "ok":
            log.error("cell x=%s method=%s seed=%s failed: %s", r["x"], r["method"], r["seed"], r["error"])
    print(f"{len(result.rows) - result.failures}/{len(result.rows)} cells ok, outputs in {out}")
    return EXIT_OK if result.failures == 0 else EXIT_FAILED


def cmd_oracle(args) -> int:
    instance = FrozenInstance.from_json(Path(args.instance).read_text())
    try:
        best = brute_force_best(instance, n_jobs=args.n_jobs)
    except InstanceTooLarge as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    payload = {
        "value": best.value,
        "qoe_sum": best.qoe_sum,
        "indices": list(best.indices),
        "evaluated": best.evaluated,
        "actions": [a.__dict__ for a in best.actions],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_freeze(args) -> int:
    spec = _spec(args.config)
    env = OffloadingEnv(spec.env)
    env.reset(np.random.SeedSequence(args.seed))
    Path(args.out).write_text(env.frozen(args.step).to_json() + "\n")
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semmec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one method on the config's base environment")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", default="mappo", choices=sorted(m for m, s in METHODS.items() if s.wrap is None))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over test episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--config", help="evaluate on this config's environment instead of the training one")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--force-mu1", action="store_true", help="override mu=1 at execution time")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a sweep experiment and write CSV/JSON outputs")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--no-checkpoints", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="brute-force the discrete grid on a frozen instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--out")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("freeze", help="write one sampled environment step as a frozen instance")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_freeze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
