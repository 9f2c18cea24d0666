"""Mixed-Gaussian pretraining prior and its closed-form posterior predictor.

Pretraining sequences are generated by drawing a component ``m`` with
probability ``pi_m``, an input mean ``mu ~ N(mu_m, sigma_mu^2 I)`` and a task
weight ``w ~ N(w_m, sigma_w^2 I)``, then ``x_i ~ N(mu, sigma_x^2 I)`` and
``y_i = <x_i, w> + N(0, sigma_y^2)``.

Given a context and a query, the Bayes-optimal prediction is
``<query, sum_m tilde_pi_m tilde_w_m>``. The per-component log evidences are
split into an input part ``psi_mu`` (uses all T+1 inputs, the query included)
and a label part ``psi_w`` (uses the T labelled pairs). Additive constants
that do not depend on the component are dropped throughout; they cancel in
every weight ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .constants import MIXTURE_WEIGHT_SUM_TOL
from .seeding import as_rng


def _vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Hyper:
    """Noise scales of the pretraining distribution."""

    sigma_x: float
    sigma_y: float
    sigma_mu: float
    sigma_w: float

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_mu", "sigma_w"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ValueError(f"{name} must be a real number, got {value!r}") from None
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be strictly positive and finite, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def delta_mu(self) -> float:
        return self.sigma_mu**2 / self.sigma_x**2

    @property
    def delta_w(self) -> float:
        return self.sigma_w**2 / self.sigma_y**2

    @classmethod
    def from_noise_level(cls, delta: float) -> "Hyper":
        """Unit observation noise with ``sigma_mu^2 = sigma_w^2 = delta``."""
        s = math.sqrt(float(delta))
        return cls(sigma_x=1.0, sigma_y=1.0, sigma_mu=s, sigma_w=s)

    def to_dict(self) -> dict:
        return {
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
            "sigma_mu": self.sigma_mu,
            "sigma_w": self.sigma_w,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Hyper":
        return cls(
            sigma_x=data["sigma_x"],
            sigma_y=data["sigma_y"],
            sigma_mu=data["sigma_mu"],
            sigma_w=data["sigma_w"],
        )


@dataclass(frozen=True)
class Component:
    """One mixture component: weight ``pi``, input-mean center, task-weight center."""

    pi: float
    mu: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        pi = float(self.pi)
        # pi = 1 is allowed so that single-component priors are expressible
        if not (0.0 < pi <= 1.0):
            raise ValueError(f"pi must lie in (0, 1], got {self.pi!r}")
        mu = _vector(self.mu, "mu")
        w = _vector(self.w, "w")
        if mu.shape != w.shape:
            raise ValueError(f"mu and w must share a dimension, got {mu.shape} and {w.shape}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def is_unit_norm(self, tol: float = 1e-9) -> bool:
        return (
            abs(np.linalg.norm(self.mu) - 1.0) <= tol
            and abs(np.linalg.norm(self.w) - 1.0) <= tol
        )

    def to_dict(self) -> dict:
        return {"pi": self.pi, "mu": self.mu.tolist(), "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Component":
        return cls(pi=data["pi"], mu=data["mu"], w=data["w"])


@dataclass(frozen=True)
class MixturePrior:
    """Ordered mixture components plus shared noise scales.

    With ``strict=True`` every center must have unit norm. The default is
    lenient because the published experiments use centers such as [5, 5, 5].
    """

    components: tuple
    hyper: Hyper
    strict: bool = field(default=False, compare=False)

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, Component) else Component.from_dict(c) for c in self.components
        )
        if not comps:
            raise ValueError("a mixture needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError(f"all components must share one dimension, got {sorted(dims)}")
        total = math.fsum(c.pi for c in comps)
        if abs(total - 1.0) > MIXTURE_WEIGHT_SUM_TOL:
            raise ValueError(f"mixture weights must sum to 1, got {total!r}")
        if not isinstance(self.hyper, Hyper):
            raise TypeError("hyper must be a Hyper instance")
        if self.strict:
            bad = [i for i, c in enumerate(comps) if not c.is_unit_norm()]
            if bad:
                raise ValueError(f"strict mode: components {bad} do not have unit-norm centers")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def pis(self) -> np.ndarray:
        return np.array([c.pi for c in self.components])

    @property
    def mus(self) -> np.ndarray:
        return np.stack([c.mu for c in self.components])

    @property
    def ws(self) -> np.ndarray:
        return np.stack([c.w for c in self.components])

    def to_dict(self) -> dict:
        return {
            "components": [c.to_dict() for c in self.components],
            "hyper": self.hyper.to_dict(),
            "dim": self.dim,
        }

    @classmethod
    def from_dict(cls, data: dict, strict: bool = False) -> "MixturePrior":
        prior = cls(
            components=tuple(Component.from_dict(c) for c in data["components"]),
            hyper=Hyper.from_dict(data["hyper"]),
            strict=strict,
        )
        if "dim" in data and int(data["dim"]) != prior.dim:
            raise ValueError(f"dim {data['dim']} does not match component dimension {prior.dim}")
        return prior


@dataclass(frozen=True)
class ContextSequence:
    """T labelled pairs ``(xs[i], ys[i])`` followed by an unlabelled query."""

    xs: np.ndarray
    ys: np.ndarray
    query: np.ndarray

    def __post_init__(self):
        query = _vector(self.query, "query")
        d = query.shape[0]
        xs = np.array(self.xs, dtype=float)
        if xs.size == 0:
            xs = xs.reshape(0, d)
        if xs.ndim != 2 or xs.shape[1] != d:
            raise ValueError(f"xs must have shape (T, {d}), got {xs.shape}")
        ys = np.array(self.ys, dtype=float).reshape(-1)
        if ys.shape[0] != xs.shape[0]:
            raise ValueError(f"got {xs.shape[0]} inputs but {ys.shape[0]} labels")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("context values must be finite")
        xs.flags.writeable = False
        ys.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "query", query)

    @property
    def T(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.query.shape[0]

    def all_inputs(self) -> np.ndarray:
        """The T context inputs with the query appended as row T."""
        return np.vstack([self.xs, self.query[None, :]])

    def permuted(self, order: Sequence[int]) -> "ContextSequence":
        order = np.asarray(order)
        return ContextSequence(self.xs[order], self.ys[order], self.query)

    def prefix(self, T: int) -> "ContextSequence":
        return ContextSequence(self.xs[:T], self.ys[:T], self.query)

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "query": self.query.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ContextSequence":
        return cls(xs=data["xs"], ys=data["ys"], query=data["query"])


@dataclass(frozen=True)
class PosteriorSummary:
    psi_mu: np.ndarray
    psi_w: np.ndarray
    tilde_pi: np.ndarray
    tilde_w: np.ndarray
    prediction: float
    log_tilde_pi: np.ndarray

    @property
    def mixed_weight(self) -> np.ndarray:
        return self.tilde_pi @ self.tilde_w


def _check_dims(component: Component, context: ContextSequence) -> None:
    if component.dim != context.dim:
        raise ValueError(
            f"dimension mismatch: component has dim {component.dim}, context has dim {context.dim}"
        )


def sample_pretrain_sequence(prior: MixturePrior, T: int, seed):
    """Draw one pretraining sequence of T pairs plus a query.

    Returns ``(context, query_label)``; the query label is kept out of the
    context so it can be used for scoring.
    """
    if int(T) != T or T < 0:
        raise ValueError(f"T must be a non-negative integer, got {T!r}")
    T = int(T)
    rng = as_rng(seed)
    h = prior.hyper
    m = int(rng.choice(prior.n_components, p=prior.pis))
    comp = prior.components[m]
    d = prior.dim
    mu = comp.mu + h.sigma_mu * rng.standard_normal(d)
    w = comp.w + h.sigma_w * rng.standard_normal(d)
    xs = mu + h.sigma_x * rng.standard_normal((T + 1, d))
    ys = xs @ w + h.sigma_y * rng.standard_normal(T + 1)
    return ContextSequence(xs[:T], ys[:T], xs[T]), float(ys[T])


def _input_scale(T: int, hyper: Hyper) -> float:
    return 2.0 * hyper.sigma_x**2 * (1.0 + (T + 1) * hyper.delta_mu)


def log_evidence_mu(component: Component, context: ContextSequence, hyper: Hyper) -> float:
    """Input-distribution log evidence of one component, up to a shared constant."""
    _check_dims(component, context)
    diff = _canonical(context).all_inputs() - component.mu
    return -float(np.sum(diff * diff)) / _input_scale(context.T, hyper)


def _label_system(context: ContextSequence, hyper: Hyper):
    """Cholesky factor of ``I + delta_w X^T X`` and the data term ``delta_w X^T y``."""
    context = _canonical(context)
    X, y = context.xs, context.ys
    dw = hyper.delta_w
    A = np.eye(context.dim) + dw * (X.T @ X)
    return cho_factor(A, lower=True), dw * (X.T @ y)


def log_evidence_w(component: Component, context: ContextSequence, hyper: Hyper) -> float:
    """Label log evidence ``(||w_m + T d_w wbar||_G^2 - ||w_m||^2) / (2 sigma_w^2)``.

    ``G = (I + T d_w Sigma_bar)^{-1}``; with no labelled pairs this is 0.
    """
    _check_dims(component, context)
    if context.T == 0:
        return 0.0
    factor, data = _label_system(context, hyper)
    b = component.w + data
    quad = float(b @ cho_solve(factor, b))
    return (quad - float(component.w @ component.w)) / (2.0 * hyper.sigma_w**2)


def posterior_w_mean(component: Component, context: ContextSequence, hyper: Hyper) -> np.ndarray:
    """Conjugate posterior mean ``(I + d_w X^T X)^{-1} (w_m + d_w X^T y)``."""
    _check_dims(component, context)
    if context.T == 0:
        return component.w.copy()
    factor, data = _label_system(context, hyper)
    return cho_solve(factor, component.w + data)


def _canonical(context: ContextSequence) -> ContextSequence:
    # sort pairs so every permutation of the context hits identical float sums
    if context.T < 2:
        return context
    keys = np.column_stack([context.xs, context.ys]).T[::-1]
    order = np.lexsort(keys)
    return context.permuted(order)


def posterior(prior: MixturePrior, context: ContextSequence) -> PosteriorSummary:
    """Closed-form posterior over components and the resulting prediction."""
    if prior.dim != context.dim:
        raise ValueError(
            f"dimension mismatch: prior has dim {prior.dim}, context has dim {context.dim}"
        )
    ctx = _canonical(context)
    h = prior.hyper
    mus, ws = prior.mus, prior.ws

    pts = ctx.all_inputs()
    sq = ((pts[None, :, :] - mus[:, None, :]) ** 2).sum(axis=(1, 2))
    psi_mu = -sq / _input_scale(ctx.T, h)

    if ctx.T == 0:
        psi_w = np.zeros(prior.n_components)
        tilde_w = ws.copy()
    else:
        factor, data = _label_system(ctx, h)
        B = ws + data[None, :]
        tilde_w = cho_solve(factor, B.T).T
        psi_w = ((B * tilde_w).sum(axis=1) - (ws * ws).sum(axis=1)) / (2.0 * h.sigma_w**2)

    logits = np.log(prior.pis) + psi_mu + psi_w
    shifted = logits - logits.max()
    log_norm = math.log(float(np.exp(shifted).sum()))
    log_tilde_pi = shifted - log_norm
    tilde_pi = np.exp(log_tilde_pi)
    tilde_pi = tilde_pi / tilde_pi.sum()
    prediction = float(ctx.query @ (tilde_pi @ tilde_w))
    return PosteriorSummary(
        psi_mu=psi_mu,
        psi_w=psi_w,
        tilde_pi=tilde_pi,
        tilde_w=tilde_w,
        prediction=prediction,
        log_tilde_pi=log_tilde_pi,
    )


def weight_ratio(prior: MixturePrior, context: ContextSequence, alpha: int, beta: int):
    """``tilde_pi_alpha / tilde_pi_beta`` and its two log-ratio terms.

    Returns ``(ratio, psi_mu, psi_w)`` where the last two are the pairwise
    differences ``psi(alpha) - psi(beta)``.
    """
    M = prior.n_components
    for name, idx in (("alpha", alpha), ("beta", beta)):
        if not (0 <= int(idx) < M) or int(idx) != idx:
            raise IndexError(f"{name}={idx!r} out of range for {M} components")
    if alpha == beta:
        raise ValueError("alpha and beta must differ")
    h = prior.hyper
    ca, cb = prior.components[alpha], prior.components[beta]
    psi_mu = log_evidence_mu(ca, context, h) - log_evidence_mu(cb, context, h)
    psi_w = log_evidence_w(ca, context, h) - log_evidence_w(cb, context, h)
    log_ratio = math.log(ca.pi / cb.pi) + psi_mu + psi_w
    # the ratio itself may leave float range even though both weights are valid
    ratio = math.exp(log_ratio) if log_ratio < 709.0 else math.inf
    return ratio, psi_mu, psi_w
