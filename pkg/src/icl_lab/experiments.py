"""Experiment configs: resolution, validation and the seeded runner.

A config is a JSON object naming an ``experiment`` plus the blocks that
experiment needs. :func:`resolve` fills defaults and reports schema and
cross-field problems with JSON paths; :func:`run` executes a resolved
config and writes ``results.csv``, ``config.echo.json`` and optionally
``plot.svg`` into the output directory. The echoed config is the
resolved one, so rerunning it reproduces ``results.csv`` byte for byte at
any thread count.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import constants as C
from .baselines import (
    chance_accuracy,
    estimate_then_retrieve,
    gd_fit,
    gradient_check,
    ols_min_norm,
    retrieval_oracle,
    ridge_fit,
)
from .metrics import Downstream, ResultTable, TaskFamily, error_curve, map_trials, selection_report
from .oracles import (
    LowConfidenceError,
    exploratory_violation_rate,
    lemma1_limit_check,
    mc_bayes_oracle,
    quadrature_oracle_1d,
    run_sign_property,
)
from .plotting import bar_chart, line_chart
from .prior import Component, Hyper, MixturePrior, posterior, sample_pretrain_sequence
from .seeding import derive_seed, make_rng
from .tasks import (
    DEFAULT_HIDDEN_DIM,
    KINDS,
    NETWORK_KINDS,
    RETRIEVAL_ROWS,
    bucket_spread,
    make_predict_retrieve_instance,
    make_retrieval_instance,
    sample_task,
)

EXPERIMENTS = (
    "algoselect_error",
    "algoselect_distance",
    "curves",
    "double_descent",
    "retrieval_eval",
    "theory_check",
    "oracle_check",
)

CONFIG_DIR = Path(__file__).with_name("configs")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_VIOLATION = 3


# -- schema --------------------------------------------------------------------

_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_COUNT = {"type": "integer", "minimum": 1}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": C.MAX_DIM}
_DIM = {"type": "integer", "minimum": 1, "maximum": C.MAX_DIM}
_T_LIST = {"type": "array", "items": _COUNT, "minItems": 1, "uniqueItems": True}

_HYPER = {
    "type": "object",
    "properties": {k: _POSITIVE for k in ("sigma_x", "sigma_y", "sigma_mu", "sigma_w")},
    "required": ["sigma_x", "sigma_y", "sigma_mu", "sigma_w"],
    "additionalProperties": False,
}

_PRIOR = {
    "type": "object",
    "properties": {
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "pi": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "mu": _VECTOR,
                    "w": _VECTOR,
                },
                "required": ["mu", "w"],
                "additionalProperties": False,
            },
        },
        "hyper": _HYPER,
        "strict": {"type": "boolean"},
    },
    "required": ["components"],
    "additionalProperties": False,
}

_TASK = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": list(KINDS)},
        "dim": _DIM,
        "hidden_dim": {"type": ["integer", "null"], "minimum": 1},
        "task_seed": _SEED,
        "resample": {"type": "boolean"},
        "input_mean": {"anyOf": [_VECTOR, {"type": "null"}]},
        "input_std": _POSITIVE,
    },
    "required": ["kind", "dim"],
    "additionalProperties": False,
}

_BASELINE = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "type": {"enum": ["gd", "ols", "ridge"]},
        "kind": {"enum": list(KINDS)},
        "lr": _POSITIVE,
        "steps": {"type": "integer", "minimum": 0},
        "hidden_dim": {"type": "integer", "minimum": 1},
        "lambda": _POSITIVE,
    },
    "required": ["type"],
    "additionalProperties": False,
}

_NOISE_LEVEL = {
    "anyOf": [
        _POSITIVE,
        {"type": "string", "pattern": r"^\s*[0-9]+(\.[0-9]+)?\s*/\s*[0-9]+(\.[0-9]+)?\s*$"},
    ]
}

_COMMON = {
    "experiment": {"enum": list(EXPERIMENTS)},
    "description": {"type": "string"},
    "seed": _SEED,
    "trials": _COUNT,
    "output_dir": {"type": "string", "minLength": 1},
}


def _schema(**props) -> dict:
    """Top-level object schema; every field is required once defaults are filled."""
    return {
        "type": "object",
        "properties": {**_COMMON, **props},
        "required": ["experiment", "seed", "trials", "output_dir", *props],
        "additionalProperties": False,
    }


def _algoselect_schema() -> dict:
    return _schema(
        T=_COUNT,
        noise_levels={"type": "array", "items": _NOISE_LEVEL, "minItems": 1},
        prior=_PRIOR,
        task=_TASK,
    )


def _curves_schema() -> dict:
    return _schema(
        T_grid=_T_LIST,
        tasks={"type": "array", "items": _TASK, "minItems": 1},
        baselines={"type": "array", "items": _BASELINE, "minItems": 1},
    )


def _schemas() -> dict:
    return {
        "algoselect_error": _algoselect_schema(),
        "algoselect_distance": _algoselect_schema(),
        "curves": _curves_schema(),
        "double_descent": _curves_schema(),
        "retrieval_eval": _schema(
            T=_COUNT,
            retrieval={
                "type": "object",
                "properties": {
                    "N": _COUNT,
                    "d": _DIM,
                    "s_range": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                "minItems": 2, "maxItems": 2},
                    "embedding_seed": _SEED,
                    "lambda": _POSITIVE,
                },
                "required": ["N", "d", "s_range", "embedding_seed", "lambda"],
                "additionalProperties": False,
            },
        ),
        "theory_check": _schema(
            input_limit={
                "type": "object",
                "properties": {
                    "repetitions": _COUNT,
                    "T_schedule": _T_LIST,
                    "mu_star": _VECTOR,
                    "mu_alpha": _VECTOR,
                    "mu_beta": _VECTOR,
                    "tau_x": _POSITIVE,
                    "hyper": _HYPER,
                },
                "required": ["repetitions", "T_schedule", "mu_star", "mu_alpha", "mu_beta", "tau_x", "hyper"],
                "additionalProperties": False,
            },
            gradient={
                "type": "object",
                "properties": {
                    "draws": _COUNT,
                    "kinds": {"type": "array", "items": {"enum": list(KINDS)}, "minItems": 1, "uniqueItems": True},
                },
                "required": ["draws", "kinds"],
                "additionalProperties": False,
            },
            exploratory={
                "type": "object",
                "properties": {"trials": {"type": "integer", "minimum": 0}, "d": {"type": "integer", "minimum": 2,
                                                                                  "maximum": C.MAX_DIM}},
                "required": ["trials", "d"],
                "additionalProperties": False,
            },
        ),
        "oracle_check": _schema(
            mc_samples={"type": "integer", "minimum": 1000},
            max_dim=_DIM,
            max_components=_COUNT,
            max_T={"type": "integer", "minimum": 0},
            hyper=_HYPER,
            quadrature={
                "type": "object",
                "properties": {
                    "instances": {"type": "integer", "minimum": 0},
                    "grid_points": {"type": "integer", "minimum": C.QUADRATURE_MIN_POINTS},
                },
                "required": ["instances", "grid_points"],
                "additionalProperties": False,
            },
        ),
    }


SCHEMAS = _schemas()

# JSON integers only: 200.0 is a number, not a count
_TYPES = jsonschema.Draft202012Validator.TYPE_CHECKER.redefine(
    "integer", lambda checker, value: isinstance(value, int) and not isinstance(value, bool)
)
_Validator = jsonschema.validators.extend(jsonschema.Draft202012Validator, type_checker=_TYPES)

_UNIT_HYPER = {"sigma_x": 1.0, "sigma_y": 1.0, "sigma_mu": 1.0, "sigma_w": 1.0}

DEFAULTS = {
    "algoselect_error": {"seed": 0, "trials": 200, "T": 50, "noise_levels": ["1/81", "1/9", 1, 9, 81]},
    "algoselect_distance": {"seed": 0, "trials": 200, "T": 50, "noise_levels": ["1/81", "1/9", 1, 9, 81]},
    "curves": {"seed": 0},
    "double_descent": {"seed": 0},
    "retrieval_eval": {
        "seed": 0,
        "trials": 500,
        "T": 50,
        "retrieval": {"N": 1000, "d": 20, "s_range": [100, 200], "embedding_seed": 0, "lambda": 1e-3},
    },
    "theory_check": {
        "seed": 0,
        "trials": 10000,
        "input_limit": {
            "repetitions": 100,
            "T_schedule": [10, 100, 1000, 10000],
            "mu_star": [0.0, 0.0, 0.0],
            "mu_alpha": [0.0, 0.0, 0.0],
            "mu_beta": [1.0, 0.0, 0.0],
            "tau_x": 1.0,
            "hyper": dict(_UNIT_HYPER),
        },
        "gradient": {"draws": 100, "kinds": list(KINDS)},
        "exploratory": {"trials": 1000, "d": 2},
    },
    "oracle_check": {
        "seed": 0,
        "trials": 50,
        "mc_samples": 1_000_000,
        "max_dim": 2,
        "max_components": 3,
        "max_T": 6,
        "hyper": dict(_UNIT_HYPER),
        "quadrature": {"instances": 20, "grid_points": 512},
    },
}


# -- resolution ----------------------------------------------------------------

@dataclass
class ValidationReport:
    config: dict | None
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "errors": [{"path": p, "message": m} for p, m in self.errors],
            "warnings": [{"path": p, "message": m} for p, m in self.warnings],
        }


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _merge(defaults, user):
    if isinstance(defaults, dict) and isinstance(user, dict):
        out = copy.deepcopy(defaults)
        for k, v in user.items():
            out[k] = _merge(defaults.get(k), v) if k in defaults else copy.deepcopy(v)
        return out
    return copy.deepcopy(user)


def parse_noise_level(value) -> float:
    """A positive number or a ``"a/b"`` fraction string."""
    if isinstance(value, str):
        try:
            num, _, den = value.replace(" ", "").partition("/")
            frac = Fraction(num) / Fraction(den or "1")
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse noise level {value!r}") from exc
        value = float(frac)
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"noise level must be positive and finite, got {value!r}")
    return value


def _fill_task(task: dict, resample_default: bool) -> None:
    task.setdefault("name", task.get("kind", "task"))
    task.setdefault("task_seed", 0)
    task.setdefault("resample", resample_default)
    task.setdefault("input_mean", None)
    task.setdefault("input_std", 1.0)
    if task.get("kind") in NETWORK_KINDS:
        task.setdefault("hidden_dim", DEFAULT_HIDDEN_DIM)
    else:
        task.setdefault("hidden_dim", None)


def _fill_baseline(b: dict) -> None:
    kind = b.get("type")
    if kind == "gd":
        b.setdefault("name", f"gd_{b.get('kind', 'model')}")
        b.setdefault("lr", 1e-3)
        b.setdefault("steps", 1000)
        b.setdefault("hidden_dim", DEFAULT_HIDDEN_DIM)
    elif kind == "ridge":
        b.setdefault("name", "ridge")
    elif kind == "ols":
        b.setdefault("name", "ols_min_norm")


def _fill(cfg: dict) -> None:
    exp = cfg["experiment"]
    cfg.setdefault("output_dir", os.path.join("out", exp))
    if exp.startswith("algoselect"):
        prior = cfg.get("prior")
        if isinstance(prior, dict):
            prior.setdefault("strict", False)
            comps = prior.get("components")
            task = cfg.get("task")
            if isinstance(task, dict) and "dim" not in task and isinstance(comps, list) and comps:
                mu = comps[0].get("mu") if isinstance(comps[0], dict) else None
                if isinstance(mu, list):
                    task["dim"] = len(mu)
        if isinstance(cfg.get("task"), dict):
            _fill_task(cfg["task"], resample_default=False)
    elif exp in ("curves", "double_descent"):
        for t in cfg.get("tasks") or []:
            if isinstance(t, dict):
                _fill_task(t, resample_default=True)
        for b in cfg.get("baselines") or []:
            if isinstance(b, dict):
                _fill_baseline(b)


def _check_vectors(errors, base, dim, **vectors) -> None:
    for name, vec in vectors.items():
        if vec is not None and len(vec) != dim:
            errors.append((_path(base + [name]), f"has length {len(vec)}, expected dimension {dim}"))


def _cross_algoselect(cfg, errors, warnings) -> None:
    comps = cfg["prior"]["components"]
    dim = len(comps[0]["mu"])
    for i, c in enumerate(comps):
        _check_vectors(errors, ["prior", "components", i], dim, mu=c["mu"], w=c["w"])
    given = [c.get("pi") for c in comps]
    if any(p is None for p in given) and not all(p is None for p in given):
        errors.append(("$.prior.components", "give pi for every component or for none"))
    elif all(p is not None for p in given):
        total = math.fsum(given)
        if abs(total - 1.0) > C.MIXTURE_WEIGHT_SUM_TOL:
            errors.append(("$.prior.components", f"pi values sum to {total!r}, not 1"))
    if cfg["prior"].get("strict"):
        for i, c in enumerate(comps):
            for name in ("mu", "w"):
                norm = float(np.linalg.norm(c[name]))
                if abs(norm - 1.0) > 1e-9:
                    warnings.append((
                        _path(["prior", "components", i, name]),
                        f"strict mode expects unit-norm centers, norm is {norm:.4g}; running non-strict",
                    ))
    if "hyper" in cfg["prior"]:
        warnings.append(("$.prior.hyper", "overridden per noise level by noise_levels"))
    task = cfg["task"]
    if task["dim"] != dim:
        errors.append(("$.task.dim", f"is {task['dim']}, but prior centers have dimension {dim}"))
    _check_vectors(errors, ["task"], task["dim"], input_mean=task["input_mean"])
    for i, level in enumerate(cfg["noise_levels"]):
        try:
            parse_noise_level(level)
        except ValueError as exc:
            errors.append((_path(["noise_levels", i]), str(exc)))


def _cross_curves(cfg, errors, warnings) -> None:
    for key in ("tasks", "baselines"):
        seen = set()
        for i, item in enumerate(cfg[key]):
            if item["name"] in seen:
                errors.append((_path([key, i, "name"]), f"duplicate name {item['name']!r}"))
            seen.add(item["name"])
    for i, t in enumerate(cfg["tasks"]):
        _check_vectors(errors, ["tasks", i], t["dim"], input_mean=t["input_mean"])
        if t["kind"] in NETWORK_KINDS and t["hidden_dim"] is None:
            errors.append((_path(["tasks", i, "hidden_dim"]), "network tasks need a hidden width"))
    for i, b in enumerate(cfg["baselines"]):
        if b["type"] == "gd" and "kind" not in b:
            errors.append((_path(["baselines", i]), "gd baselines need 'kind'"))
        if b["type"] == "ridge" and "lambda" not in b:
            errors.append((_path(["baselines", i]), "ridge baselines need 'lambda'"))
        extra = {"gd": {"lambda"}, "ols": {"kind", "lr", "steps", "hidden_dim", "lambda"},
                 "ridge": {"kind", "lr", "steps", "hidden_dim"}}[b["type"]] & set(b)
        for k in sorted(extra):
            warnings.append((_path(["baselines", i, k]), f"ignored by {b['type']} baselines"))


def _cross_retrieval(cfg, errors, warnings) -> None:
    r = cfg["retrieval"]
    lo, hi = r["s_range"]
    if lo > hi:
        errors.append(("$.retrieval.s_range", f"lower end {lo} exceeds upper end {hi}"))
        return
    if hi + RETRIEVAL_ROWS >= r["N"]:
        errors.append(("$.retrieval.s_range", f"shift {hi} + {RETRIEVAL_ROWS} must stay below N={r['N']}"))
    for kind in ("linear", "quadratic"):
        margin = math.ceil(8.0 * bucket_spread(r["d"], kind))
        if lo - margin < 0 or hi + margin >= r["N"]:
            errors.append((
                "$.retrieval.s_range",
                f"{kind} buckets need an 8-sigma margin of {margin} inside [0, N={r['N']})",
            ))


def _cross_theory(cfg, errors, warnings) -> None:
    input_limit = cfg["input_limit"]
    dim = len(input_limit["mu_star"])
    _check_vectors(errors, ["input_limit"], dim, mu_alpha=input_limit["mu_alpha"], mu_beta=input_limit["mu_beta"])
    if not errors:
        star, a, b = (np.asarray(input_limit[k], float) for k in ("mu_star", "mu_alpha", "mu_beta"))
        if np.sum((b - star) ** 2) < np.sum((a - star) ** 2):
            errors.append(("$.input_limit.mu_beta", "must be at least as far from mu_star as mu_alpha"))


_CROSS = {
    "algoselect_error": _cross_algoselect,
    "algoselect_distance": _cross_algoselect,
    "curves": _cross_curves,
    "double_descent": _cross_curves,
    "retrieval_eval": _cross_retrieval,
    "theory_check": _cross_theory,
    "oracle_check": lambda cfg, errors, warnings: None,
}


def resolve(raw) -> ValidationReport:
    """Fill defaults, then run schema and cross-field checks."""
    if not isinstance(raw, dict):
        return ValidationReport(None, [("$", "config must be a JSON object")])
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        return ValidationReport(None, [("$.experiment", f"must be one of {list(EXPERIMENTS)}, got {exp!r}")])
    cfg = _merge(DEFAULTS[exp], raw)
    _fill(cfg)
    validator = _Validator(SCHEMAS[exp])
    errors = [
        (_path(e.absolute_path), e.message)
        for e in sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    ]
    warnings = []
    if not errors:
        _CROSS[exp](cfg, errors, warnings)
    return ValidationReport(None if errors else cfg, errors, warnings)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def find_config(name) -> Path:
    """A path as given, or a canned config by name (with or without ``.json``)."""
    p = Path(name)
    if p.exists():
        return p
    canned = CONFIG_DIR / (p.name if p.suffix == ".json" else f"{p.name}.json")
    if canned.exists():
        return canned
    raise FileNotFoundError(f"no config file or canned config named {str(name)!r}")


def canned_configs() -> list:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def validate(path) -> ValidationReport:
    """Validate the config file at ``path``; unreadable files become errors."""
    try:
        raw = load_config(find_config(path))
    except (OSError, json.JSONDecodeError) as exc:
        return ValidationReport(None, [("$", f"cannot read config: {exc}")])
    return resolve(raw)


# -- runners -------------------------------------------------------------------

@dataclass
class Outcome:
    table: ResultTable
    summary: dict
    violation: bool = False
    plot: str | None = None


def _build_prior(block: dict, hyper: Hyper) -> MixturePrior:
    comps = block["components"]
    M = len(comps)
    pis = [c.get("pi", 1.0 / M) for c in comps]
    return MixturePrior(tuple(Component(p, c["mu"], c["w"]) for p, c in zip(pis, comps)), hyper)


def _build_task(block: dict):
    mean = None if block["input_mean"] is None else np.asarray(block["input_mean"], float)
    if block["resample"]:
        return TaskFamily(block["kind"], block["dim"], block["hidden_dim"], mean, block["input_std"])
    task = sample_task(block["kind"], block["dim"], block["hidden_dim"], seed=block["task_seed"])
    return Downstream(task, mean, block["input_std"])


def _run_algoselect(cfg: dict, threads: int) -> Outcome:
    prior = _build_prior(cfg["prior"], Hyper(1.0, 1.0, 1.0, 1.0))
    levels = [parse_noise_level(v) for v in cfg["noise_levels"]]
    table = selection_report(prior, _build_task(cfg["task"]), cfg["T"], cfg["trials"], levels, cfg["seed"], threads)
    summary = {}
    for delta in levels:
        pi = table.select(metric="tilde_pi", noise_level=delta)
        err = table.select(metric="component_error", noise_level=delta)
        dist = table.select(metric="input_distance", noise_level=delta)
        best = min(err, key=lambda m: (err[m], m))
        summary[repr(delta)] = {
            "mean_tilde_pi": [pi[m] for m in sorted(pi)],
            "highest_pi_component": max(pi, key=lambda m: (pi[m], -m)),
            "lowest_error_component": best,
            "closest_component": min(dist, key=lambda m: (dist[m], m)),
            "spearman_pi_error": table.get(metric="spearman_pi_error", noise_level=delta, component=None),
            "spearman_pi_distance": table.get(metric="spearman_pi_distance", noise_level=delta, component=None),
            "lowest_error_has_highest_pi": pi[best] == max(pi.values()),
        }
    series = {
        f"component {m}": [(d, table.get(metric="tilde_pi", noise_level=d, component=m)) for d in levels]
        for m in range(1, prior.n_components + 1)
    }
    plot = line_chart(series, cfg["experiment"], "noise level", "mean posterior weight", logx=True)
    return Outcome(table, summary, plot=plot)


def _context_tag(ctx) -> int:
    digest = hashlib.blake2b(ctx.xs.tobytes() + ctx.ys.tobytes() + ctx.query.tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def make_predictor(baseline: dict, seed: int):
    """Context -> query prediction for a baseline block.

    Gradient-descent initialisations are seeded from the master seed, the
    baseline name and a hash of the context, so they do not depend on the
    order in which trials run.
    """
    kind = baseline["type"]
    if kind == "ols":
        return lambda ctx: float(ols_min_norm(ctx) @ ctx.query)
    if kind == "ridge":
        lam = baseline["lambda"]
        return lambda ctx: float(ridge_fit(ctx, lam) @ ctx.query)

    def predict(ctx):
        rng = make_rng(seed, "gd_init", baseline["name"], _context_tag(ctx))
        fit = gd_fit(baseline["kind"], ctx, baseline["lr"], baseline["steps"], rng, baseline["hidden_dim"])
        return fit.predict(ctx.query)

    return predict


def _run_curves(cfg: dict, threads: int) -> Outcome:
    table = ResultTable(("task", "baseline", "context_length", "metric"), "value")
    series, summary = {}, {}
    for task_cfg in cfg["tasks"]:
        task = _build_task(task_cfg)
        task_seed = derive_seed(cfg["seed"], "curves", task_cfg["name"])
        for b in cfg["baselines"]:
            curve = error_curve(make_predictor(b, cfg["seed"]), task, cfg["T_grid"], cfg["trials"], task_seed, threads)
            for (T, metric), value in curve.rows():
                table.add(value, task=task_cfg["name"], baseline=b["name"], context_length=T, metric=metric)
            mse = curve.select(metric="mean_squared_error")
            label = f"{task_cfg['name']}/{b['name']}"
            series[label] = sorted(mse.items())
            peak = max(mse, key=lambda T: (mse[T], -T))
            summary[label] = {"peak_context_length": peak, "peak_error": mse[peak]}
    plot = line_chart(series, cfg["experiment"], "context length T", "mean squared error", logy=True)
    return Outcome(table, summary, plot=plot)


def _run_retrieval(cfg: dict, threads: int) -> Outcome:
    r = cfg["retrieval"]
    seed, T, trials = cfg["seed"], cfg["T"], cfg["trials"]
    use_cache = bool(os.environ.get("ICL_LAB_CACHE"))
    table = ResultTable(("task", "metric"), "value")
    summary = {}
    for fkind in ("linear", "quadratic"):
        def one(k, fkind=fkind):
            inst = make_predict_retrieve_instance(
                r["N"], r["d"], r["s_range"], T, fkind, make_rng(seed, "retrieval", fkind, k),
                r["embedding_seed"], use_cache,
            )
            out = estimate_then_retrieve(inst, lam=r["lambda"])
            known = estimate_then_retrieve(inst, lam=r["lambda"], w=inst.metadata["w"], feature=fkind)
            return (
                bool(out) and out.label_index == inst.target_index,
                bool(known) and known.label_index == inst.target_index,
                inst.label_present(),
                inst,
            )

        results = map_trials(one, trials, threads)
        correct = np.array([c for c, _, _, _ in results], float)
        known = np.array([c for _, c, _, _ in results], float)
        present = np.array([p for _, _, p, _ in results], bool)
        name = f"predict_retrieve_{fkind}"
        metrics = {
            "accuracy": correct.mean(),
            "accuracy_known_w": known.mean(),
            "label_present_rate": present.mean(),
            "accuracy_given_present": correct[present].mean() if present.any() else math.nan,
            "chance": chance_accuracy([inst for *_, inst in results]),
        }
        for metric, value in metrics.items():
            table.add(value, task=name, metric=metric)
        summary[name] = metrics

    def copy_one(k):
        inst = make_retrieval_instance(
            r["N"], r["d"], r["s_range"], T, make_rng(seed, "copy", k), r["embedding_seed"], use_cache
        )
        out = retrieval_oracle(inst)
        return bool(out) and out.label_index == inst.target_index

    copy_acc = float(np.mean(map_trials(copy_one, trials, threads)))
    table.add(copy_acc, task="copy", metric="oracle_accuracy")
    summary["copy"] = {"oracle_accuracy": copy_acc}
    bars = {
        "linear": summary["predict_retrieve_linear"]["accuracy"],
        "linear (true w)": summary["predict_retrieve_linear"]["accuracy_known_w"],
        "quadratic": summary["predict_retrieve_quadratic"]["accuracy"],
        "copy": copy_acc,
    }
    return Outcome(table, summary, plot=bar_chart(bars, "retrieval accuracy", "top-1 accuracy"))


def theory_report(
    seed: int, trials: int, input_limit: dict, gradient: dict, exploratory: dict, threads: int = 1
) -> Outcome:
    """Label-weight sign property, input-term limit, gradient and exploratory checks."""
    table = ResultTable(("check", "context_length", "metric"), "value")
    sign = run_sign_property(seed, trials, d=1)
    for metric, value in (
        ("violations", sign.violations),
        ("filtered_trials", sign.filtered_trials),
        ("candidates", sign.candidates),
        ("min_psi_w", sign.min_psi_w),
    ):
        table.add(value, check="label_sign", context_length=None, metric=metric)

    hyper = Hyper(**input_limit["hyper"])
    runs = map_trials(
        lambda r: lemma1_limit_check(
            input_limit["mu_star"], input_limit["tau_x"], input_limit["mu_alpha"], input_limit["mu_beta"], hyper,
            input_limit["T_schedule"], make_rng(seed, "input_limit", r),
        ),
        input_limit["repetitions"],
        threads,
    )
    limit_rows = []
    for j, T in enumerate(input_limit["T_schedule"]):
        psis = np.array([run[j][1] for run in runs])
        limit = runs[0][j][2]
        mean = float(psis.mean())
        rel = abs(mean - limit) / abs(limit) if limit != 0 else abs(mean)
        table.add(mean, check="input_limit", context_length=T, metric="mean_psi_mu")
        table.add(limit, check="input_limit", context_length=T, metric="analytic_limit")
        table.add(rel, check="input_limit", context_length=T, metric="relative_error")
        limit_rows.append({"T": T, "mean_psi_mu": mean, "analytic_limit": limit, "relative_error": rel})
    T_max = max(input_limit["T_schedule"])
    limit_ok = next(r for r in limit_rows if r["T"] == T_max)["relative_error"] <= C.ASYMPTOTIC_REL_TOL

    grads = {}
    for kind in gradient["kinds"]:
        grads[kind] = gradient_check(kind, gradient["draws"], make_rng(seed, "gradient", kind))
        table.add(grads[kind], check=f"gradient_{kind}", context_length=None, metric="max_relative_error")
    grads_ok = all(v < C.GRAD_REL_TOL for v in grads.values())

    explore = None
    if exploratory["trials"] > 0:
        explore = exploratory_violation_rate(seed, exploratory["trials"], d=exploratory["d"])
        table.add(explore, check=f"exploratory_d{exploratory['d']}", context_length=None, metric="violation_rate")

    summary = {
        "label_sign": {
            "violations": sign.violations,
            "filtered_trials": sign.filtered_trials,
            "candidates": sign.candidates,
            "min_psi_w": sign.min_psi_w,
            "floor": C.PSI_W_FLOOR,
        },
        "input_limit": {"rows": limit_rows, "tolerance": C.ASYMPTOTIC_REL_TOL, "holds": limit_ok},
        "gradient": {"max_relative_error": grads, "tolerance": C.GRAD_REL_TOL, "holds": grads_ok},
        "exploratory": None if explore is None else {"d": exploratory["d"], "violation_rate": explore},
    }
    violation = sign.violations > 0 or not limit_ok or not grads_ok
    summary["violation"] = violation
    plot = line_chart(
        {
            "mean psi_mu": [(r["T"], r["mean_psi_mu"]) for r in limit_rows],
            "limit": [(r["T"], r["analytic_limit"]) for r in limit_rows],
        },
        "input-term limit",
        "context length T",
        "psi_mu",
        logx=True,
    )
    return Outcome(table, summary, violation, plot)


def _run_theory(cfg: dict, threads: int) -> Outcome:
    return theory_report(cfg["seed"], cfg["trials"], cfg["input_limit"], cfg["gradient"], cfg["exploratory"], threads)


def random_instance(rng: np.random.Generator, max_dim: int, max_components: int, max_T: int, hyper: Hyper,
                    dim: int | None = None):
    """A random mixture prior and a context drawn from it."""
    d = int(rng.integers(1, max_dim + 1)) if dim is None else int(dim)
    M = int(rng.integers(1, max_components + 1))
    pis = rng.dirichlet(np.ones(M))
    pis = pis / math.fsum(pis)
    mus = rng.standard_normal((M, d))
    ws = rng.standard_normal((M, d))
    prior = MixturePrior(tuple(Component(float(p), m, w) for p, m, w in zip(pis, mus, ws)), hyper)
    T = int(rng.integers(0, max_T + 1))
    context, _ = sample_pretrain_sequence(prior, T, rng)
    return prior, context


def _run_oracle(cfg: dict, threads: int) -> Outcome:
    seed = cfg["seed"]
    hyper = Hyper(**cfg["hyper"])
    table = ResultTable(("check", "instance", "metric"), "value")

    def mc_one(k):
        prior, ctx = random_instance(
            make_rng(seed, "oracle_instance", k), cfg["max_dim"], cfg["max_components"], cfg["max_T"], hyper
        )
        closed = posterior(prior, ctx).prediction
        try:
            est = mc_bayes_oracle(prior, ctx, cfg["mc_samples"], make_rng(seed, "oracle_mc", k))
        except LowConfidenceError as exc:
            return closed, math.nan, math.nan, exc.ess
        return closed, est.mean, est.std_error, est.effective_sample_size

    within = 0
    zs = {}
    for k, (closed, mean, se, ess) in enumerate(map_trials(mc_one, cfg["trials"], threads)):
        z = (closed - mean) / se if se > 0 else (0.0 if closed == mean else math.inf)
        ok = math.isfinite(z) and abs(z) <= C.MC_SIGMA
        within += ok
        zs[k] = z if math.isfinite(z) else math.nan
        for metric, value in (
            ("closed_form", closed), ("oracle_mean", mean), ("std_error", se),
            ("z", zs[k]), ("effective_sample_size", ess), ("within_3se", float(ok)),
        ):
            table.add(value, check="monte_carlo", instance=k, metric=metric)
    table.add(within, check="monte_carlo", instance=None, metric="within_3se_count")

    q = cfg["quadrature"]

    def quad_one(k):
        prior, ctx = random_instance(
            make_rng(seed, "quadrature_instance", k), 1, cfg["max_components"], cfg["max_T"], hyper, dim=1
        )
        return posterior(prior, ctx).prediction, quadrature_oracle_1d(prior, ctx, q["grid_points"])

    worst = 0.0
    for k, (closed, quad) in enumerate(map_trials(quad_one, q["instances"], threads)):
        diff = abs(closed - quad)
        worst = max(worst, diff)
        table.add(closed, check="quadrature", instance=k, metric="closed_form")
        table.add(quad, check="quadrature", instance=k, metric="quadrature")
        table.add(diff, check="quadrature", instance=k, metric="abs_diff")
    if q["instances"]:
        table.add(worst, check="quadrature", instance=None, metric="max_abs_diff")
    summary = {
        "monte_carlo": {"instances": cfg["trials"], "within_3se": within},
        "quadrature": {"instances": q["instances"], "max_abs_diff": worst if q["instances"] else None},
    }
    plot = bar_chart(zs, "closed form vs Monte-Carlo oracle", "z-score")
    return Outcome(table, summary, plot=plot)


_RUNNERS = {
    "algoselect_error": _run_algoselect,
    "algoselect_distance": _run_algoselect,
    "curves": _run_curves,
    "double_descent": _run_curves,
    "retrieval_eval": _run_retrieval,
    "theory_check": _run_theory,
    "oracle_check": _run_oracle,
}


def execute(cfg: dict, threads: int = 1) -> Outcome:
    """Run a resolved config in memory."""
    if int(threads) < 1:
        raise ValueError("threads must be at least 1")
    return _RUNNERS[cfg["experiment"]](cfg, int(threads))


def echo_json(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _publish(out_dir: Path, files: dict) -> None:
    """Write ``files`` into ``out_dir`` through a sibling temp directory.

    A fresh output directory appears in one rename; an existing one has
    each file swapped in atomically.
    """
    out_dir = out_dir.resolve()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        for name, text in files.items():
            with open(tmp / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        if not out_dir.exists():
            try:
                os.rename(tmp, out_dir)
                return
            except OSError:
                out_dir.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(tmp / name, out_dir / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


@dataclass
class RunResult:
    exit_code: int
    output_dir: Path | None
    files: list
    summary: dict
    errors: list
    warnings: list

    def to_dict(self) -> dict:
        return {
            "exit_code": self.exit_code,
            "output_dir": None if self.output_dir is None else str(self.output_dir),
            "files": self.files,
            "summary": self.summary,
            "errors": [{"path": p, "message": m} for p, m in self.errors],
            "warnings": [{"path": p, "message": m} for p, m in self.warnings],
        }


def run(config, out=None, plot: bool = False, threads: int = 1) -> RunResult:
    """Validate, execute and publish one experiment.

    ``config`` is a dict or a path/canned name. ``out`` overrides the
    config's ``output_dir``. Nothing is written unless validation passes
    and the experiment completes.
    """
    raw = config if isinstance(config, dict) else load_config(find_config(config))
    if out is not None and isinstance(raw, dict):
        raw = {**raw, "output_dir": str(out)}
    report = resolve(raw)
    if not report.valid:
        return RunResult(EXIT_INVALID, None, [], {}, report.errors, report.warnings)
    cfg = report.config
    outcome = execute(cfg, threads)
    files = {"results.csv": outcome.table.to_csv(), "config.echo.json": echo_json(cfg)}
    if plot and outcome.plot is not None:
        files["plot.svg"] = outcome.plot
    out_dir = Path(cfg["output_dir"])
    _publish(out_dir, files)
    code = EXIT_VIOLATION if outcome.violation else EXIT_OK
    return RunResult(code, out_dir, sorted(files), outcome.summary, [], report.warnings)
