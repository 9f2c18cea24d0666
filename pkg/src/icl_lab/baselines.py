"""Comparison predictors: gradient-descent fits, least squares, ridge and retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from . import constants as C
from .prior import ContextSequence
from .seeding import as_rng
from .tasks import (
    BUCKET_SCALE,
    DEFAULT_HIDDEN_DIM,
    KINDS,
    NETWORK_KINDS,
    RetrievalInstance,
    evaluate,
    features,
    param_shapes,
)


class DivergenceError(RuntimeError):
    """Gradient descent blew up."""


@dataclass(frozen=True)
class FittedModel:
    kind: str
    params: dict
    training_log: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.training_log[-1][1] if self.training_log else math.nan

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim == 1:
            return float(evaluate(self.kind, self.params, X[None, :])[0])
        return evaluate(self.kind, self.params, X)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "final_loss": self.final_loss,
        }


def mse_and_grad(kind: str, params: dict, X: np.ndarray, y: np.ndarray):
    """Mean squared error of ``kind`` on ``(X, y)`` and its parameter gradient."""
    T = X.shape[0]
    if kind in ("linear", "quadratic", "cubic", "sqrt_linear"):
        F = features(kind, X)
        r = F @ params["w"] - y
        return float(r @ r) / T, {"w": (2.0 / T) * (F.T @ r)}
    if kind == "linear_plus_quadratic":
        Q = X * X
        r = Q @ params["w1"] + X @ params["w2"] - y
        return float(r @ r) / T, {"w1": (2.0 / T) * (Q.T @ r), "w2": (2.0 / T) * (X.T @ r)}
    if kind in NETWORK_KINDS:
        w1, w2 = params["w1"], params["w2"]
        H = X @ w2.T
        if kind == "relu_nn":
            A = np.maximum(H, 0.0)
            dA = (H > 0).astype(float)
        else:
            A = expit(H)
            dA = A * (1.0 - A)
        r = A @ w1 - y
        back = (r[:, None] * w1[None, :]) * dA
        return float(r @ r) / T, {"w1": (2.0 / T) * (A.T @ r), "w2": (2.0 / T) * (back.T @ X)}
    raise ValueError(f"unknown function kind {kind!r}")


def init_params(kind: str, d: int, d_prime: int | None, rng: np.random.Generator) -> dict:
    """Standard normal scaled by ``1/sqrt(fan_in)``."""
    shapes = param_shapes(kind, d, d_prime)
    if kind == "linear_plus_quadratic":
        fan = {"w1": 2 * d, "w2": 2 * d}
    elif kind in NETWORK_KINDS:
        fan = {"w1": d_prime, "w2": d}
    else:
        fan = {"w": d}
    return {k: rng.standard_normal(s) / math.sqrt(fan[k]) for k, s in shapes.items()}


def gd_fit(
    kind: str,
    context: ContextSequence,
    lr: float = 1e-3,
    steps: int = 1000,
    seed=0,
    d_prime: int = DEFAULT_HIDDEN_DIM,
    log_every: int = 50,
) -> FittedModel:
    """Full-batch gradient descent on the context's mean squared error."""
    if kind not in KINDS:
        raise ValueError(f"unknown function kind {kind!r}")
    if context.T < 1:
        raise ValueError("gd_fit needs at least one labelled pair")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = as_rng(seed)
    params = init_params(kind, context.dim, d_prime if kind in NETWORK_KINDS else None, rng)
    X, y = context.xs, context.ys
    log = []
    loss, grad = mse_and_grad(kind, params, X, y)
    for step in range(steps):
        if not math.isfinite(loss) or loss > C.DIVERGENCE_LOSS:
            raise DivergenceError(f"{kind}: loss {loss:.3g} at step {step} with lr={lr}")
        if step % log_every == 0:
            log.append((step, loss))
        params = {k: params[k] - lr * grad[k] for k in params}
        loss, grad = mse_and_grad(kind, params, X, y)
    if not math.isfinite(loss) or loss > C.DIVERGENCE_LOSS:
        raise DivergenceError(f"{kind}: loss {loss:.3g} after {steps} steps with lr={lr}")
    log.append((steps, loss))
    return FittedModel(kind, params, log)


def ols_min_norm(context: ContextSequence) -> np.ndarray:
    """Minimum-norm least-squares weights via an SVD pseudo-inverse."""
    if context.T < 1:
        raise ValueError("ols_min_norm needs at least one labelled pair")
    return np.linalg.pinv(context.xs, rcond=C.PINV_RCOND) @ context.ys


def ridge_fit(context: ContextSequence, lam: float) -> np.ndarray:
    """``(X^T X + lam I)^{-1} X^T y``."""
    if context.T < 1:
        raise ValueError("ridge_fit needs at least one labelled pair")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    X, y = context.xs, context.ys
    A = X.T @ X + lam * np.eye(context.dim)
    return cho_solve(cho_factor(A, lower=True), X.T @ y)


# -- retrieval ---------------------------------------------------------------

class NoMatch:
    """No context example supports the prediction."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "NO_MATCH"


NO_MATCH = NoMatch()


@dataclass(frozen=True)
class Retrieved:
    label: np.ndarray
    label_index: int
    position: int
    conflicting: bool = False


def retrieval_oracle(instance: RetrievalInstance):
    """Label of the most recent context pair whose input token equals the query's.

    ``conflicting`` is set when earlier matches carry a different label,
    which a well-formed instance never does.
    """
    hits = np.flatnonzero(instance.token_indices == instance.query_token)
    if instance.query_token < 0 or hits.size == 0:
        return NO_MATCH
    last = int(hits[-1])
    conflicting = bool(np.any(instance.label_indices[hits] != instance.label_indices[last]))
    return Retrieved(instance.ys[last].copy(), int(instance.label_indices[last]), last, conflicting)


def _fit_bucket_map(xs: np.ndarray, targets: np.ndarray, lam: float):
    """Ridge fit of ``targets ~ xs @ v + c`` with an unpenalised intercept."""
    x_mean = xs.mean(axis=0)
    t_mean = targets.mean()
    Xc = xs - x_mean
    A = Xc.T @ Xc + lam * np.eye(xs.shape[1])
    v = cho_solve(cho_factor(A, lower=True), Xc.T @ (targets - t_mean))
    return v, float(t_mean - x_mean @ v)


def estimate_then_retrieve(
    instance: RetrievalInstance,
    context: ContextSequence | None = None,
    lam: float = 1e-3,
    feature: str = "linear",
    w=None,
):
    """Estimate the hidden linear map, bucket the query, copy a matching label.

    The scalar targets are the label rows recovered from the embedding table
    (shifted by 1/2 to the bucket centre). A ridge fit with intercept gives
    ``0.4 w_hat`` and the shift; the query's predicted row is
    ``floor(0.4 <w_hat, phi(query)> + shift)`` and the most recent context
    pair carrying that row supplies the answer. Passing ``w`` skips the
    estimate and only recovers the shift.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    if context is None:
        context = ContextSequence(instance.xs, instance.label_indices + 0.5, instance.query)
    F = features(feature, context.xs)
    fq = features(feature, context.query[None, :])[0]
    if w is None:
        v, c = _fit_bucket_map(F, context.ys, lam)
    else:
        v = BUCKET_SCALE * np.asarray(w, float)
        c = float(np.median(instance.label_indices - np.floor(F @ v)))
    predicted = int(math.floor(float(fq @ v) + c))
    hits = np.flatnonzero(instance.label_indices == predicted)
    if hits.size == 0:
        return NO_MATCH
    last = int(hits[-1])
    return Retrieved(instance.ys[last].copy(), predicted, last)


def retrieval_accuracy(instances, predict) -> float:
    """Fraction of instances where ``predict`` returns the target row."""
    correct = 0
    for inst in instances:
        out = predict(inst)
        correct += bool(out) and out.label_index == inst.target_index
    return correct / len(instances)


def chance_accuracy(instances) -> float:
    """Accuracy of copying the label of a uniformly random context pair."""
    return float(np.mean([np.mean(inst.label_indices == inst.target_index) for inst in instances]))


def _flat(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def _unflat(vec: np.ndarray, like: dict) -> dict:
    out, i = {}, 0
    for k in sorted(like):
        n = like[k].size
        out[k] = vec[i : i + n].reshape(like[k].shape)
        i += n
    return out


def finite_difference_grad(kind: str, params: dict, X: np.ndarray, y: np.ndarray, h: float = C.FD_STEP):
    """Central differences of the mean squared error in every parameter."""
    theta = _flat(params)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up, _ = mse_and_grad(kind, _unflat(theta + e, params), X, y)
        down, _ = mse_and_grad(kind, _unflat(theta - e, params), X, y)
        grad[i] = (up - down) / (2.0 * h)
    return _unflat(grad, params)


def gradient_check(kind: str, draws: int, seed, d: int = 4, d_prime: int = 6, T: int = 8) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Each draw samples parameters, inputs and labels from standard normals;
    the gap is ``||g - g_fd|| / max(||g||, ||g_fd||)`` over all parameters.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown function kind {kind!r}")
    rng = as_rng(seed)
    worst = 0.0
    for _ in range(draws):
        shapes = param_shapes(kind, d, d_prime if kind in NETWORK_KINDS else None)
        params = {k: rng.standard_normal(s) for k, s in shapes.items()}
        X = rng.standard_normal((T, d))
        y = rng.standard_normal(T)
        _, g = mse_and_grad(kind, params, X, y)
        g_fd = finite_difference_grad(kind, params, X, y)
        a, b = _flat(g), _flat(g_fd)
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
        worst = max(worst, float(np.linalg.norm(a - b) / scale))
    return worst
