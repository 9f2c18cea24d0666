"""Synthetic task generators: function classes, retrieval and word classification."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .prior import ContextSequence
from .seeding import as_rng, make_rng

KINDS = (
    "linear",
    "quadratic",
    "relu_nn",
    "sqrt_linear",
    "cubic",
    "linear_plus_quadratic",
    "sigmoid_nn",
)
NETWORK_KINDS = ("relu_nn", "sigmoid_nn")
DEFAULT_DIM = 20
DEFAULT_HIDDEN_DIM = 100
RETRIEVAL_SCHEMA = "icl_lab.retrieval/1"
BUCKET_SCALE = 0.4
RETRIEVAL_ROWS = 5


class IndexOverflowError(ValueError):
    """A generated embedding index fell outside the table."""


def signed_sqrt(x):
    return np.sign(x) * np.sqrt(np.abs(x))


def features(kind: str, X: np.ndarray) -> np.ndarray:
    """Fixed input transform of the single-weight kinds."""
    if kind == "linear":
        return X
    if kind == "quadratic":
        return X * X
    if kind == "cubic":
        return X * X * X
    if kind == "sqrt_linear":
        return signed_sqrt(X)
    raise ValueError(f"kind {kind!r} has no single feature map")


def activation(kind: str, H: np.ndarray) -> np.ndarray:
    if kind == "relu_nn":
        return np.maximum(H, 0.0)
    if kind == "sigmoid_nn":
        return expit(H)
    raise ValueError(f"kind {kind!r} is not a network kind")


def evaluate(kind: str, params: dict, X: np.ndarray) -> np.ndarray:
    """Outputs of a function of class ``kind`` on the rows of ``X``."""
    if kind in ("linear", "quadratic", "cubic", "sqrt_linear"):
        return features(kind, X) @ params["w"]
    if kind == "linear_plus_quadratic":
        return (X * X) @ params["w1"] + X @ params["w2"]
    if kind in NETWORK_KINDS:
        return activation(kind, X @ params["w2"].T) @ params["w1"]
    raise ValueError(f"unknown function kind {kind!r}")


def param_shapes(kind: str, d: int, d_prime: int | None = None) -> dict:
    if kind in ("linear", "quadratic", "cubic", "sqrt_linear"):
        return {"w": (d,)}
    if kind == "linear_plus_quadratic":
        return {"w1": (d,), "w2": (d,)}
    if kind in NETWORK_KINDS:
        if d_prime is None:
            raise ValueError(f"{kind} needs a hidden width d_prime")
        return {"w1": (d_prime,), "w2": (d_prime, d)}
    raise ValueError(f"unknown function kind {kind!r}")


@dataclass(frozen=True)
class TaskFunction:
    kind: str
    params: dict
    dim: int
    hidden_dim: int | None = None

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}, got {x.shape}")
        if x.ndim == 1:
            return float(evaluate(self.kind, self.params, x[None, :])[0])
        return evaluate(self.kind, self.params, x)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "hidden_dim": self.hidden_dim,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskFunction":
        return cls(
            kind=data["kind"],
            params={k: np.asarray(v, float) for k, v in data["params"].items()},
            dim=int(data["dim"]),
            hidden_dim=data.get("hidden_dim"),
        )


def sample_task(kind: str, d: int, d_prime: int | None = None, seed=0) -> TaskFunction:
    """Draw a function of class ``kind`` with i.i.d. standard-normal parameters."""
    if kind not in KINDS:
        raise ValueError(f"unknown function kind {kind!r}; expected one of {KINDS}")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    if kind in NETWORK_KINDS and (d_prime is None or d_prime < 1):
        raise ValueError(f"{kind} needs a positive hidden width d_prime")
    rng = as_rng(seed)
    shapes = param_shapes(kind, int(d), d_prime)
    params = {name: rng.standard_normal(shape) for name, shape in shapes.items()}
    return TaskFunction(kind, params, int(d), d_prime if kind in NETWORK_KINDS else None)


def sample_icl_batch(task: TaskFunction, T: int, seed, input_mean=None, input_std: float = 1.0):
    """Context of T pairs ``(x_i, task(x_i))`` and a scored query.

    Inputs are standard normal unless a mean/std is supplied. Returns
    ``(context, query_label)``.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    rng = as_rng(seed)
    X = input_std * rng.standard_normal((int(T) + 1, task.dim))
    if input_mean is not None:
        X = X + np.asarray(input_mean, float)
    y = evaluate(task.kind, task.params, X)
    return ContextSequence(X[:-1], y[:-1], X[-1]), float(y[-1])


# -- embedding tables ---------------------------------------------------------

def embedding_id(N: int, d: int, embedding_seed: int) -> str:
    return f"emb-N{int(N)}-d{int(d)}-s{int(embedding_seed)}"


def cache_dir() -> Path:
    env = os.environ.get("ICL_LAB_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "icl_lab"


def _generate_embedding(N: int, d: int, embedding_seed: int) -> np.ndarray:
    return make_rng(embedding_seed, "embedding", N, d).standard_normal((N, d))


def embedding_table(N: int, d: int, embedding_seed: int = 0, use_cache: bool = True) -> np.ndarray:
    """Frozen ``N x d`` standard-normal table, content-addressed on disk.

    The cache is write-once: the first writer's file wins and later writers
    discard their temporary copy.
    """
    if N < 1 or d < 1:
        raise ValueError("embedding table needs N >= 1 and d >= 1")
    if not use_cache:
        return _generate_embedding(N, d, embedding_seed)
    directory = cache_dir()
    path = directory / f"{embedding_id(N, d, embedding_seed)}.npy"
    if path.exists():
        table = np.load(path)
        if table.shape == (N, d):
            table.flags.writeable = False
            return table
    table = _generate_embedding(N, d, embedding_seed)
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npy.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, table)
        try:
            os.link(tmp, path)
        except FileExistsError:
            pass
    finally:
        os.unlink(tmp)
    table.flags.writeable = False
    return table


# -- retrieval instances -------------------------------------------------------

@dataclass(frozen=True)
class RetrievalInstance:
    """One retrieval-style prompt over a frozen embedding table.

    ``label_indices[i]`` is the table row of ``ys[i]``; ``token_indices[i]``
    is the row of ``xs[i]`` when inputs are table rows (``-1`` otherwise).
    """

    kind: str
    embedding_id: str
    token_indices: np.ndarray
    shift: int
    xs: np.ndarray
    ys: np.ndarray
    label_indices: np.ndarray
    query: np.ndarray
    query_token: int
    target_index: int
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.xs.shape[0]

    @property
    def pairs(self):
        return list(zip(self.xs, self.ys))

    def label_present(self) -> bool:
        return bool(np.any(self.label_indices == self.target_index))

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": RETRIEVAL_SCHEMA,
                "kind": self.kind,
                "embedding_id": self.embedding_id,
                "token_indices": self.token_indices.tolist(),
                "shift": self.shift,
                "xs": self.xs.tolist(),
                "ys": self.ys.tolist(),
                "label_indices": self.label_indices.tolist(),
                "query": self.query.tolist(),
                "query_token": self.query_token,
                "target_index": self.target_index,
                "metadata": self.metadata,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "RetrievalInstance":
        data = json.loads(line)
        if data.get("schema") != RETRIEVAL_SCHEMA:
            raise ValueError(f"unsupported schema {data.get('schema')!r}")
        return cls(
            kind=data["kind"],
            embedding_id=data["embedding_id"],
            token_indices=np.asarray(data["token_indices"], dtype=int),
            shift=int(data["shift"]),
            xs=np.asarray(data["xs"], float),
            ys=np.asarray(data["ys"], float),
            label_indices=np.asarray(data["label_indices"], dtype=int),
            query=np.asarray(data["query"], float),
            query_token=int(data["query_token"]),
            target_index=int(data["target_index"]),
            metadata=data["metadata"],
        )


def write_jsonl(instances, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [RetrievalInstance.from_json(line) for line in fh if line.strip()]


def _check_range(s_range) -> tuple:
    lo, hi = (int(v) for v in s_range)
    if lo > hi:
        raise ValueError(f"empty shift range {s_range!r}")
    return lo, hi


def _rows(table: np.ndarray, idx: np.ndarray, N: int) -> np.ndarray:
    bad = idx[(idx < 0) | (idx >= N)]
    if bad.size:
        raise IndexOverflowError(f"embedding index {int(bad[0])} outside [0, {N})")
    return np.asarray(table[idx], dtype=float)


def make_retrieval_instance(
    N: int, d: int, s_range, T: int, seed, embedding_seed: int = 0, use_cache: bool = True
):
    """Copy task: inputs are rows 0-4 of E, labels are the rows ``s`` further on."""
    lo, hi = _check_range(s_range)
    if hi + RETRIEVAL_ROWS >= N:
        raise IndexOverflowError(f"max shift {hi} + {RETRIEVAL_ROWS} must be below N={N}")
    if T < 1:
        raise ValueError("T must be positive")
    table = embedding_table(N, d, embedding_seed, use_cache)
    rng = as_rng(seed)
    s = int(rng.integers(lo, hi + 1))
    tokens = rng.integers(0, RETRIEVAL_ROWS, size=int(T) + 1)
    labels = tokens + s
    xs = _rows(table, tokens, N)
    ys = _rows(table, labels, N)
    return RetrievalInstance(
        kind="retrieval",
        embedding_id=embedding_id(N, d, embedding_seed),
        token_indices=tokens[:-1],
        shift=s,
        xs=xs[:-1],
        ys=ys[:-1],
        label_indices=labels[:-1],
        query=xs[-1],
        query_token=int(tokens[-1]),
        target_index=int(labels[-1]),
        metadata={
            "generator": "retrieval",
            "N": int(N), "d": int(d), "s_range": [lo, hi], "T": int(T),
            "seed": seed if isinstance(seed, int) else None,
            "embedding_seed": int(embedding_seed),
        },
    )


def bucket_spread(d: int, function_kind: str) -> float:
    """Standard deviation of ``0.4 <w, phi(x)>`` for standard-normal w and x."""
    var = d if function_kind == "linear" else 3 * d
    return BUCKET_SCALE * math.sqrt(var)


def make_predict_retrieve_instance(
    N: int,
    d: int,
    s_range,
    T: int,
    function_kind: str,
    seed,
    embedding_seed: int = 0,
    use_cache: bool = True,
):
    """Labels are rows ``floor(0.4 <w, phi(x)>) + s`` of E with a shared shift ``s``.

    ``phi`` is the identity for ``function_kind="linear"`` and the elementwise
    square for ``"quadratic"``.
    """
    if function_kind not in ("linear", "quadratic"):
        raise ValueError(f"function_kind must be 'linear' or 'quadratic', got {function_kind!r}")
    lo, hi = _check_range(s_range)
    margin = math.ceil(8.0 * bucket_spread(d, function_kind))
    if lo - margin < 0 or hi + margin >= N:
        raise IndexOverflowError(
            f"N={N} cannot absorb shifts {lo}..{hi} with an 8-sigma bucket margin of {margin}"
        )
    if T < 1:
        raise ValueError("T must be positive")
    table = embedding_table(N, d, embedding_seed, use_cache)
    rng = as_rng(seed)
    s = int(rng.integers(lo, hi + 1))
    w = rng.standard_normal(d)
    X = rng.standard_normal((int(T) + 1, d))
    score = BUCKET_SCALE * (features(function_kind, X) @ w)
    labels = np.floor(score).astype(int) + s
    ys = _rows(table, labels, N)
    return RetrievalInstance(
        kind=f"predict_retrieve_{function_kind}",
        embedding_id=embedding_id(N, d, embedding_seed),
        token_indices=np.full(int(T), -1),
        shift=s,
        xs=X[:-1],
        ys=ys[:-1],
        label_indices=labels[:-1],
        query=X[-1],
        query_token=-1,
        target_index=int(labels[-1]),
        metadata={
            "generator": "predict_retrieve",
            "function_kind": function_kind,
            "N": int(N), "d": int(d), "s_range": [lo, hi], "T": int(T),
            "seed": seed if isinstance(seed, int) else None,
            "embedding_seed": int(embedding_seed),
            "w": w.tolist(),
        },
    )


def make_word_classification_instance(
    N: int = 10000,
    d: int = 20,
    d_prime: int = 10,
    C: int = 5,
    offset: int = 1000,
    T: int = 50,
    seed=0,
    embedding_seed: int = 0,
    use_cache: bool = True,
):
    """Classify table rows by ``argmax_j x[:d']^T W[:, j]``; label rows start at ``offset``.

    Ties go to the lowest class index.
    """
    if offset < 0 or offset + C > N:
        raise ValueError(f"offset {offset} + C {C} must fit in N={N}")
    if not (1 <= d_prime <= d):
        raise ValueError(f"d_prime must lie in [1, d={d}], got {d_prime}")
    if C < 1 or T < 1:
        raise ValueError("C and T must be positive")
    table = embedding_table(N, d, embedding_seed, use_cache)
    rng = as_rng(seed)
    W = rng.standard_normal((d_prime, C))
    tokens = rng.integers(0, N, size=int(T) + 1)
    xs = _rows(table, tokens, N)
    scores = xs[:, :d_prime] @ W
    labels = np.argmax(scores, axis=1) + offset
    ys = _rows(table, labels, N)
    return RetrievalInstance(
        kind="word_classification",
        embedding_id=embedding_id(N, d, embedding_seed),
        token_indices=tokens[:-1],
        shift=int(offset),
        xs=xs[:-1],
        ys=ys[:-1],
        label_indices=labels[:-1],
        query=xs[-1],
        query_token=int(tokens[-1]),
        target_index=int(labels[-1]),
        metadata={
            "generator": "word_classification",
            "N": int(N), "d": int(d), "d_prime": int(d_prime), "C": int(C),
            "offset": int(offset), "T": int(T),
            "seed": seed if isinstance(seed, int) else None,
            "embedding_seed": int(embedding_seed),
        },
    )
