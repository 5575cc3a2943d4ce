"""Sweep orchestration: config loading, train/evaluate cells, CSV and JSON outputs."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml
from joblib import Parallel, delayed
from scipy import stats

from .baselines import LocalOffloader, SemanticUnaware
from .config import WEIGHT_PRESETS, EnvConfig
from .d3qn import D3QNOffloader
from .evaluation import METRICS, evaluate_policy
from .mappo import LOG_COLUMNS, MAPPOOffloader
from .nn import load_checkpoint
from .validation import ConfigError, check_weights

AXES = {"bandwidth": "bandwidth", "noise": "noise_mw", "n_users": "n_ues", "mu_min": "mu_min", "weights": "weights"}
# these axes change the action space or the reward, so a model trained at the base point does not transfer
RETRAIN_AXES = ("mu_min", "weights")

RESULT_COLUMNS = ("axis", "x", "method", "seed", "status", *METRICS, "qoe_ci", "error")
AGG_METRICS = ("qoe", "latency", "energy", "accuracy", "reward")
PLOT_METRICS = ("qoe", "latency", "energy", "accuracy")


@dataclass(frozen=True)
class Method:
    estimator: type | None
    params: dict
    train_key: str  # methods sharing a key reuse one trained model
    wrap: Any = None


METHODS = {
    "local": Method(LocalOffloader, {}, "local"),
    "mappo": Method(MAPPOOffloader, {"semantic_aware": True}, "mappo"),
    "mappo_unaware": Method(MAPPOOffloader, {"semantic_aware": False}, "mappo_unaware"),
    # aware policy with mu overridden to 1 at execution time only
    "mappo_forced_mu1": Method(MAPPOOffloader, {"semantic_aware": True}, "mappo", SemanticUnaware),
    "d3qn": Method(D3QNOffloader, {"semantic_aware": True}, "d3qn"),
    "d3qn_unaware": Method(D3QNOffloader, {"semantic_aware": False}, "d3qn_unaware"),
}
TRAIN_SECTIONS = {"mappo": MAPPOOffloader, "d3qn": D3QNOffloader}


@dataclass(frozen=True)
class ExperimentSpec:
    env: EnvConfig = EnvConfig()
    axis: str = "bandwidth"
    values: tuple = ()
    methods: tuple = ("local", "mappo", "mappo_unaware", "d3qn")
    seeds: tuple = (0,)
    eval_runs: int = 200
    retrain_per_point: bool | None = None
    n_jobs: int = 1
    train: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"experiment.axis: expected one of {sorted(AXES)}, got {self.axis!r}")
        if not self.values:
            object.__setattr__(self, "values", (self.base_value(),))
        object.__setattr__(self, "values", tuple(self._check_value(v, i) for i, v in enumerate(self.values)))
        if not self.methods:
            raise ConfigError("experiment.methods: at least one method required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"experiment.methods: unknown method {m!r}, expected one of {sorted(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("experiment.methods: duplicate entries")
        if not self.seeds:
            raise ConfigError("experiment.seeds: at least one seed required")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s < 0:
                raise ConfigError(f"experiment.seeds: expected non-negative integers, got {s!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment.seeds: duplicate entries")
        if isinstance(self.eval_runs, bool) or not isinstance(self.eval_runs, int) or self.eval_runs < 1:
            raise ConfigError(f"experiment.eval_runs: must be a positive integer, got {self.eval_runs!r}")
        for section, params in self.train.items():
            if section not in TRAIN_SECTIONS:
                raise ConfigError(f"train.{section}: unknown section")
            allowed = set(TRAIN_SECTIONS[section]().get_params()) - {"semantic_aware", "random_state"}
            for key in params:
                if key not in allowed:
                    raise ConfigError(f"train.{section}.{key}: unknown key")
        for i, _ in enumerate(self.values):
            self.env_at(i)

    def base_value(self):
        value = getattr(self.env, AXES[self.axis])
        return list(value) if self.axis == "weights" else value

    def _check_value(self, value, i):
        where = f"experiment.values[{i}]"
        if self.axis == "weights":
            if isinstance(value, str):
                if value not in WEIGHT_PRESETS:
                    raise ConfigError(f"{where}: unknown preset {value!r}")
                return value
            try:
                check_weights(value)
            except ConfigError as exc:
                raise ConfigError(f"{where}.{exc}") from None
            return tuple(float(v) for v in value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if self.axis == "n_users":
            if int(value) != value:
                raise ConfigError(f"{where}: user count must be an integer")
            return int(value)
        return float(value)

    @property
    def retrain(self) -> bool:
        return self.axis in RETRAIN_AXES if self.retrain_per_point is None else bool(self.retrain_per_point)

    def env_at(self, i) -> EnvConfig:
        value = self.values[i]
        if self.axis == "weights" and isinstance(value, str):
            value = WEIGHT_PRESETS[value]
        try:
            return self.env.replace(**{AXES[self.axis]: value})
        except ConfigError as exc:
            raise ConfigError(f"experiment.values[{i}]: {exc}") from None

    def label(self, i) -> str:
        value = self.values[i]
        if isinstance(value, str):
            return value
        if isinstance(value, tuple):
            return "/".join(repr(v) for v in value)
        return repr(value)

    def to_dict(self) -> dict:
        return {
            "env": self.env.to_dict(),
            "experiment": {
                "axis": self.axis,
                "values": [list(v) if isinstance(v, tuple) else v for v in self.values],
                "methods": list(self.methods),
                "seeds": list(self.seeds),
                "eval_runs": self.eval_runs,
                "retrain_per_point": self.retrain,
                "n_jobs": self.n_jobs,
            },
            "train": {k: dict(v) for k, v in self.train.items()},
            "output_dir": self.output_dir,
        }


_EXPERIMENT_KEYS = {"axis", "values", "methods", "seeds", "eval_runs", "retrain_per_point", "n_jobs"}


def spec_from_dict(data: Mapping[str, Any] | None) -> ExperimentSpec:
    data = dict(data or {})
    unknown = sorted(set(data) - {"env", "experiment", "train", "output_dir"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level key")
    env = EnvConfig.from_dict(_table(data.get("env"), "env"), path="env")
    exp = _table(data.get("experiment"), "experiment")
    bad = sorted(set(exp) - _EXPERIMENT_KEYS)
    if bad:
        raise ConfigError(f"experiment.{bad[0]}: unknown key")
    kwargs: dict[str, Any] = {"env": env}
    for key in ("values", "methods", "seeds"):
        if key in exp:
            if not isinstance(exp[key], list):
                raise ConfigError(f"experiment.{key}: expected a list")
            kwargs[key] = tuple(exp[key])
    for key in ("axis", "eval_runs", "retrain_per_point", "n_jobs"):
        if key in exp:
            kwargs[key] = exp[key]
    train = _table(data.get("train"), "train")
    kwargs["train"] = {k: _table(v, f"train.{k}") for k, v in train.items()}
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    return ExperimentSpec(**kwargs)


def _table(value, where) -> dict:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a table")
    return dict(value)


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "5e6" as a string; accept the 1.2 float syntax
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def load_config(path) -> ExperimentSpec:
    """Parse a YAML experiment file; missing keys take their defaults."""
    with open(path) as fh:
        try:
            data = yaml.load(fh, Loader=_Loader)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return spec_from_dict(data)


# ---------------------------------------------------------------- models


def build_estimator(method: str, seed: int, train: Mapping[str, Mapping] | None = None):
    spec = METHODS[method]
    params = dict(spec.params)
    if spec.estimator is not LocalOffloader:
        section = "mappo" if spec.estimator is MAPPOOffloader else "d3qn"
        params.update((train or {}).get(section, {}))
        params["random_state"] = seed
    return spec.estimator(**params)


def train_model(method: str, config: EnvConfig, seed: int, train=None):
    return build_estimator(method, seed, train).fit(config)


def as_policy(method: str, model):
    wrap = METHODS[method].wrap
    return wrap(model) if wrap is not None else model


def load_model(path):
    """Rebuild a trained estimator from any checkpoint written by ``save``."""
    meta, _ = load_checkpoint(path)
    kinds = {"mappo": MAPPOOffloader, "d3qn": D3QNOffloader, "local": LocalOffloader}
    kind = meta.get("kind")
    if kind not in kinds:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    return kinds[kind].load(path)


# ---------------------------------------------------------------- running


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list
    models: dict  # (train_key, seed, point or None) -> model or error string

    @property
    def failures(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def _model_key(spec, method, seed, i):
    return METHODS[method].train_key, seed, i if spec.retrain else None


def _train_job(spec, key):
    train_key, seed, point = key
    config = spec.env_at(point) if point is not None else spec.env
    method = next(m for m, s in METHODS.items() if s.train_key == train_key and s.wrap is None)
    try:
        return train_model(method, config, seed, spec.train)
    except Exception as exc:  # noqa: BLE001 - recorded in the cell, run continues
        return f"{type(exc).__name__}: {exc}"


def _eval_job(spec, i, method, seed, model):
    row = {"axis": spec.axis, "x": spec.label(i), "method": method, "seed": seed}
    if isinstance(model, str):
        return {**row, "status": "failed", "error": f"training: {model}"}
    config = spec.env_at(i)
    try:
        res = evaluate_policy(as_policy(method, model), config, runs=spec.eval_runs, seed=config.seed)
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc()
        return {**row, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {**row, "status": "ok", **{m: res[m] for m in METRICS}, "qoe_ci": res["qoe_ci"], "error": ""}


def run_experiment(spec: ExperimentSpec, models: dict | None = None) -> ExperimentResult:
    """Train each needed model once, then evaluate every (point, method, seed) cell.

    Evaluation episodes share one seed across cells, so methods and points are compared on paired draws.
    """
    cells = [(i, m, s) for i in range(len(spec.values)) for m in spec.methods for s in spec.seeds]
    keys = sorted({_model_key(spec, m, s, i) for i, m, s in cells}, key=repr)
    models = dict(models or {})
    todo = [k for k in keys if k not in models]
    parallel = Parallel(n_jobs=spec.n_jobs)
    for key, model in zip(todo, parallel(delayed(_train_job)(spec, k) for k in todo)):
        models[key] = model
    rows = parallel(delayed(_eval_job)(spec, i, m, s, models[_model_key(spec, m, s, i)]) for i, m, s in cells)
    rows = [{c: r.get(c, "") for c in RESULT_COLUMNS} for r in rows]
    return ExperimentResult(spec, rows, models)


def aggregate(result: ExperimentResult) -> list[dict]:
    """Mean and population std over successful seeds for each (point, method)."""
    spec = result.spec
    out = []
    for i in range(len(spec.values)):
        for m in spec.methods:
            ok = [r for r in result.rows if r["x"] == spec.label(i) and r["method"] == m and r["status"] == "ok"]
            row = {"axis": spec.axis, "x": spec.label(i), "method": m, "n_ok": len(ok)}
            for metric in AGG_METRICS:
                vals = np.array([r[metric] for r in ok], dtype=float)
                row[f"{metric}_mean"] = float(vals.mean()) if ok else math.nan
                row[f"{metric}_std"] = float(vals.std()) if ok else math.nan
            out.append(row)
    return out


# ---------------------------------------------------------------- output


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def emit_outputs(result: ExperimentResult, out_dir, checkpoints=True) -> list[Path]:
    """Write results, aggregates, plot data, training logs and checkpoints under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    spec = result.spec
    written = []

    path = out / "results.csv"
    write_csv(path, RESULT_COLUMNS, result.rows)
    written.append(path)

    agg = aggregate(result)
    agg_cols = list(agg[0]) if agg else ["axis", "x", "method", "n_ok"]
    path = out / "aggregate.csv"
    write_csv(path, agg_cols, agg)
    written.append(path)

    for metric in PLOT_METRICS:
        path = out / f"plot_{metric}.csv"
        rows = [{"x": a["x"], "series": a["method"], "mean": a[f"{metric}_mean"], "std": a[f"{metric}_std"]} for a in agg]
        write_csv(path, ("x", "series", "mean", "std"), rows)
        written.append(path)

    curves = {}
    for (train_key, seed, point), model in sorted(result.models.items(), key=lambda kv: repr(kv[0])):
        if isinstance(model, str) or not getattr(model, "log_", None):
            continue
        stem = f"{train_key}_seed{seed}" + (f"_x{point}" if point is not None else "")
        path = out / "logs" / f"{stem}.csv"
        write_csv(path, LOG_COLUMNS, model.log_)
        written.append(path)
        if checkpoints:
            (out / "checkpoints").mkdir(exist_ok=True)
            model.save(out / "checkpoints" / f"{stem}.npz")
        if point is None:
            curves.setdefault(train_key, []).append([r["mean_reward"] for r in model.log_])
    if curves:
        path = out / "plot_convergence.csv"
        rows = []
        for series, runs in sorted(curves.items()):
            length = min(len(r) for r in runs)
            arr = np.array([r[:length] for r in runs])
            for e in range(length):
                rows.append({"x": e + 1, "series": series, "mean": float(arr[:, e].mean()), "std": float(arr[:, e].std())})
        write_csv(path, ("x", "series", "mean", "std"), rows)
        written.append(path)

    path = out / "summary.json"
    summary = {
        "spec": spec.to_dict(),
        "cells": len(result.rows),
        "failures": result.failures,
        "failed_cells": [
            {"x": r["x"], "method": r["method"], "seed": r["seed"], "error": r["error"]}
            for r in result.rows
            if r["status"] != "ok"
        ],
        "aggregate": agg,
    }
    path.write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


# ---------------------------------------------------------------- statistics


def mann_kendall(values, alternative="less"):
    """Mann-Kendall trend test as Kendall's tau against the sample order; returns (S, tau, p)."""
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 3:
        raise ValueError("trend test needs at least 3 points")
    s = int(sum(np.sign(y[j] - y[i]) for i in range(n) for j in range(i + 1, n)))
    res = stats.kendalltau(np.arange(n), y, alternative=alternative)
    return s, float(res.statistic), float(res.pvalue)


def convergence_episode(rewards, fraction=0.95, window=10, tail=50):
    """First episode whose trailing moving average reaches ``fraction`` of the final-``tail`` plateau.

    The threshold is measured from zero, with the gap taken on |plateau| so negative plateaus work too.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < max(window, tail):
        raise ValueError(f"need at least {max(window, tail)} episodes")
    plateau = r[-tail:].mean()
    threshold = plateau - (1.0 - fraction) * abs(plateau)
    moving = np.convolve(r, np.ones(window) / window, mode="valid")
    hit = np.flatnonzero(moving >= threshold)
    return int(hit[0]) + window if hit.size else r.size


def replace_seeds(spec: ExperimentSpec, seed: int) -> ExperimentSpec:
    return dataclasses.replace(spec, seeds=(int(seed),))
