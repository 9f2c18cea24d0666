"""Scoring, result tables and the algorithm-selection report."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import spearmanr

from .prior import ContextSequence, Hyper, MixturePrior, posterior
from .seeding import as_rng, make_rng
from .tasks import TaskFunction, evaluate, sample_icl_batch, sample_task


def _sort_key(value):
    if value is None:
        return (0, 0, "")
    if isinstance(value, (int, float, np.integer, np.floating)):
        return (1, float(value), "")
    return (2, 0, str(value))


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "NA"
        return repr(value)
    return str(value)


@dataclass
class ResultTable:
    """A sparse grid of values keyed by named axes.

    CSV output has one row per cell, the axes as leading columns and the
    value last; rows are ordered by axis values so that equal tables give
    byte-identical files. Missing values are written as ``NA``.
    """

    axes: tuple
    metric_name: str = "value"
    cells: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = tuple(self.axes)

    def add(self, value, **coords) -> None:
        if set(coords) != set(self.axes):
            raise KeyError(f"expected coordinates {self.axes}, got {tuple(coords)}")
        key = tuple(coords[a] for a in self.axes)
        value = float(value)
        if math.isinf(value):
            raise ValueError(f"cell {key} is infinite")
        self.cells[key] = value

    def get(self, **coords) -> float:
        return self.cells[tuple(coords[a] for a in self.axes)]

    def select(self, **coords) -> dict:
        """Cells matching the given subset of coordinates, keyed by the rest."""
        idx = {a: i for i, a in enumerate(self.axes)}
        free = [a for a in self.axes if a not in coords]
        out = {}
        for key, value in self.cells.items():
            if all(key[idx[a]] == v for a, v in coords.items()):
                rest = tuple(key[idx[a]] for a in free)
                out[rest[0] if len(rest) == 1 else rest] = value
        return out

    def rows(self):
        for key in sorted(self.cells, key=lambda k: tuple(_sort_key(v) for v in k)):
            yield key, self.cells[key]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(self.axes) + [self.metric_name])
        for key, value in self.rows():
            writer.writerow([_format(v) for v in key] + [_format(value)])
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def map_trials(fn: Callable[[int], object], trials: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(trials - 1)]``, optionally on a thread pool.

    Results come back in trial order so aggregation is schedule-independent.
    """
    if threads <= 1 or trials <= 1:
        return [fn(k) for k in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


# -- downstream distributions -------------------------------------------------

@dataclass(frozen=True)
class Downstream:
    """A fixed target function with Gaussian inputs ``N(input_mean, input_std^2 I)``."""

    task: TaskFunction
    input_mean: np.ndarray | None = None
    input_std: float = 1.0

    @property
    def dim(self) -> int:
        return self.task.dim

    @property
    def mean(self) -> np.ndarray:
        if self.input_mean is None:
            return np.zeros(self.dim)
        return np.asarray(self.input_mean, float)

    def sample(self, T: int, seed):
        return sample_icl_batch(self.task, T, seed, self.input_mean, self.input_std)

    def sample_inputs(self, n: int, seed) -> np.ndarray:
        rng = as_rng(seed)
        return self.mean + self.input_std * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class TaskFamily:
    """Draws a fresh task function for every context."""

    kind: str
    dim: int
    hidden_dim: int | None = None
    input_mean: np.ndarray | None = None
    input_std: float = 1.0

    @property
    def mean(self) -> np.ndarray:
        if self.input_mean is None:
            return np.zeros(self.dim)
        return np.asarray(self.input_mean, float)

    def sample(self, T: int, seed):
        rng = as_rng(seed)
        task = sample_task(self.kind, self.dim, self.hidden_dim, rng)
        return sample_icl_batch(task, T, rng, self.input_mean, self.input_std)


def _as_downstream(task) -> Downstream:
    if isinstance(task, (Downstream, TaskFamily)):
        return task
    if isinstance(task, TaskFunction):
        return Downstream(task)
    raise TypeError("expected a TaskFunction or a Downstream")


# -- metrics ------------------------------------------------------------------

def error_curve(predictor, task, T_grid, trials: int, seed, threads: int = 1) -> ResultTable:
    """Mean squared query error of ``predictor`` per context length.

    ``predictor`` maps a ContextSequence to a scalar prediction for its
    query. ``task`` is a TaskFunction, a Downstream or a TaskFamily. Each
    ``(T, trial)`` gets a fresh context from its own stream.
    """
    if int(trials) != trials or trials < 1:
        raise ValueError("trials must be a positive integer")
    downstream = _as_downstream(task)
    table = ResultTable(("context_length", "metric"), "value")
    for T in T_grid:
        T = int(T)

        def one(k, T=T):
            context, target = downstream.sample(T, make_rng(seed, "curve", T, k))
            return (float(predictor(context)) - target) ** 2

        errs = np.array(map_trials(one, trials, threads))
        table.add(errs.mean(), context_length=T, metric="mean_squared_error")
        se = errs.std(ddof=1) / math.sqrt(trials) if trials > 1 else math.nan
        table.add(se, context_length=T, metric="std_error")
    return table


def component_test_error(prior: MixturePrior, component_index: int, task, n: int, seed) -> float:
    """Mean squared error of the fixed center ``w_m`` on ``n`` downstream inputs."""
    if not (0 <= component_index < prior.n_components):
        raise IndexError(f"component {component_index} out of range")
    downstream = _as_downstream(task)
    X = downstream.sample_inputs(int(n), seed)
    y = evaluate(downstream.task.kind, downstream.task.params, X)
    r = X @ prior.components[component_index].w - y
    return float(np.mean(r * r))


def input_distance(mu_pretrain, mu_downstream) -> float:
    a = np.asarray(mu_pretrain, float)
    b = np.asarray(mu_downstream, float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def prefix_matching_score(attention, tokens) -> float | None:
    """Mean attention from each token to positions right after its earlier copies.

    Position ``j`` qualifies for query position ``i`` when ``j <= i`` and
    ``tokens[j - 1] == tokens[i]``. Positions with no qualifying ``j`` are
    skipped; ``None`` means no position qualified at all.
    """
    A = np.asarray(attention, float)
    tokens = list(tokens)
    T = len(tokens)
    if T < 2:
        raise ValueError("need at least two tokens")
    if A.shape != (T, T):
        raise ValueError(f"attention must be {T}x{T}, got {A.shape}")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValueError("attention weights must be finite and non-negative")
    causal = np.tril(A)
    sums = causal.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-6)
    if bad.size:
        raise ValueError(f"attention row {int(bad[0])} sums to {sums[bad[0]]!r} over the causal support")
    scores = []
    for i in range(T):
        cols = [j for j in range(1, i + 1) if tokens[j - 1] == tokens[i]]
        if cols:
            scores.append(float(A[i, cols].sum()))
    if not scores:
        return None
    return float(np.mean(scores))


def spearman(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return math.nan
    return float(spearmanr(a, b).statistic)


def selection_report(
    prior: MixturePrior,
    downstream: Downstream,
    T: int,
    trials: int,
    noise_levels,
    seed,
    threads: int = 1,
) -> ResultTable:
    """Posterior weights against component quality and input distance, per noise level.

    For each noise level ``delta`` the prior's scales become
    ``sigma_x = sigma_y = 1`` and ``sigma_mu^2 = sigma_w^2 = delta``. Every
    noise level sees the same downstream contexts. Metrics per component:
    ``component_error`` (mean squared error of ``w_m`` on the trial's
    context pairs), ``tilde_pi`` (mean posterior weight) and
    ``input_distance``; per level: ``icl_error`` (closed-form query error)
    ``spearman_pi_error`` and ``spearman_pi_distance``.
    """
    if int(trials) != trials or trials < 1:
        raise ValueError("trials must be a positive integer")
    M = prior.n_components
    ws = prior.ws
    contexts = map_trials(lambda k: downstream.sample(T, make_rng(seed, "selection", k)), trials, threads)
    errors = np.array(
        [np.mean((ctx.xs @ ws.T - ctx.ys[:, None]) ** 2, axis=0) for ctx, _ in contexts]
    )
    mean_errors = errors.mean(axis=0)
    distances = [input_distance(c.mu, downstream.mean) for c in prior.components]

    table = ResultTable(("metric", "noise_level", "component"), "value")
    table.metadata.update(
        {
            "noise_realisation": "sigma_x = sigma_y = 1, sigma_mu^2 = sigma_w^2 = delta",
            "T": int(T),
            "trials": int(trials),
        }
    )
    for delta in noise_levels:
        delta = float(delta)
        level_prior = dataclasses.replace(prior, hyper=Hyper.from_noise_level(delta))

        def one(k):
            ctx, target = contexts[k]
            post = posterior(level_prior, ctx)
            return post.tilde_pi, (post.prediction - target) ** 2

        results = map_trials(one, trials, threads)
        pis = np.array([r[0] for r in results])
        sq = np.array([r[1] for r in results])
        mean_pi = pis.mean(axis=0)
        for m in range(M):
            table.add(mean_pi[m], metric="tilde_pi", noise_level=delta, component=m + 1)
            table.add(mean_errors[m], metric="component_error", noise_level=delta, component=m + 1)
            table.add(distances[m], metric="input_distance", noise_level=delta, component=m + 1)
        table.add(sq.mean(), metric="icl_error", noise_level=delta, component=None)
        table.add(
            spearman(mean_pi, mean_errors),
            metric="spearman_pi_error",
            noise_level=delta,
            component=None,
        )
        table.add(
            spearman(mean_pi, distances),
            metric="spearman_pi_distance",
            noise_level=delta,
            component=None,
        )
    return table
