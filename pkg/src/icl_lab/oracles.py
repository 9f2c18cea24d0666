"""Brute-force oracles and assumption checks for the mixture posterior.

Nothing here calls into the closed-form routines of :mod:`icl_lab.prior`
except where a check is explicitly *about* them (the sign and limit
checks evaluate ``psi`` values); the Monte-Carlo and quadrature
oracles recompute everything from the generative model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import constants as C
from .prior import Component, ContextSequence, Hyper, MixturePrior, log_evidence_mu, log_evidence_w
from .seeding import as_rng, make_rng


class LowConfidenceError(RuntimeError):
    """Importance sampling produced too few effective samples to trust."""

    def __init__(self, ess: float, n_samples: int):
        super().__init__(
            f"effective sample size {ess:.1f} of {n_samples} is below {C.MIN_ESS:g}; "
            "estimate withheld"
        )
        self.ess = ess
        self.n_samples = n_samples


@dataclass(frozen=True)
class Assumption2Report:
    cond_min_eig: tuple
    cond_identity: bool
    cond_cross: bool
    cross_value: float
    skipped_zero_labels: tuple = field(default=())

    @property
    def all_hold(self) -> bool:
        return all(self.cond_min_eig) and self.cond_identity and self.cond_cross


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    std_error: float
    n_samples: int
    effective_sample_size: float


def cross_term(xs: np.ndarray, ys: np.ndarray, w_alpha: np.ndarray, w_beta: np.ndarray):
    """Cross condition of the downstream-context check; returns ``(value, skipped_indices)``.

    Terms whose label is exactly zero would divide by zero and are skipped.
    """
    T = xs.shape[0]
    gram = xs @ xs.T  # gram[j, i] = x_j^T x_i
    diff = np.asarray(w_alpha, float) - np.asarray(w_beta, float)
    total = 0.0
    skipped = []
    for i in range(T):
        if ys[i] == 0.0:
            skipped.append(i)
            continue
        inner = np.mean(gram[:, i] * ys / ys[i] - gram[i, i])
        total += 2.0 * float(diff @ xs[i]) * ys[i] * inner
    return total / T, tuple(skipped)


def check_assumption2(context: ContextSequence, hyper: Hyper, w_alpha, w_beta) -> Assumption2Report:
    """Evaluate the three downstream-context conditions literally."""
    if context.T < 1:
        raise ValueError("the context conditions need at least one labelled pair")
    xs, ys, T, d = context.xs, context.ys, context.T, context.dim
    w_alpha = np.asarray(w_alpha, float)
    w_beta = np.asarray(w_beta, float)
    if w_alpha.shape != (d,) or w_beta.shape != (d,):
        raise ValueError(f"task weights must have dimension {d}")

    min_eig = tuple(
        bool(np.linalg.eigvalsh(np.outer(x, x))[0] >= 1.0 - 1e-12) for x in xs
    )
    dw = hyper.delta_w
    lhs = (1.0 + T * dw) * np.linalg.inv(np.eye(d) + dw * (xs.T @ xs))
    identity = bool(np.max(np.abs(lhs - np.eye(d))) <= C.IDENTITY_TOL)
    value, skipped = cross_term(xs, ys, w_alpha, w_beta)
    return Assumption2Report(
        cond_min_eig=min_eig,
        cond_identity=identity,
        cond_cross=bool(value >= 0.0),
        cross_value=float(value),
        skipped_zero_labels=skipped,
    )


def empirical_risk_gap(context: ContextSequence, w_alpha, w_beta) -> float:
    """Mean squared error of ``w_beta`` minus that of ``w_alpha`` on the context."""
    ra = context.xs @ np.asarray(w_alpha, float) - context.ys
    rb = context.xs @ np.asarray(w_beta, float) - context.ys
    return float(np.mean(rb**2 - ra**2))


def psi_w_pair(context: ContextSequence, hyper: Hyper, w_alpha, w_beta) -> float:
    zeros = np.zeros(context.dim)
    ca = Component(0.5, zeros, w_alpha)
    cb = Component(0.5, zeros, w_beta)
    return log_evidence_w(ca, context, hyper) - log_evidence_w(cb, context, hyper)


@dataclass(frozen=True)
class SignPropertyRun:
    violations: int
    filtered_trials: int
    candidates: int
    min_psi_w: float


def _sign_candidate(rng: np.random.Generator, d: int):
    T = int(rng.integers(1, 21))
    if d == 1:
        xs = rng.choice([-1.0, 1.0], size=(T, 1))
    else:
        xs = rng.standard_normal((T, d))
    ys = 3.0 * rng.standard_normal(T)
    w_alpha = 2.0 * rng.standard_normal(d)
    w_beta = 2.0 * rng.standard_normal(d)
    hyper = Hyper(
        sigma_x=1.0,
        sigma_y=float(np.exp(rng.uniform(-1.5, 1.5))),
        sigma_mu=1.0,
        sigma_w=float(np.exp(rng.uniform(-1.5, 1.5))),
    )
    query = np.zeros(d)
    return ContextSequence(xs, ys, query), hyper, w_alpha, w_beta


def run_sign_property(seed, trials: int, d: int = 1, max_candidates: int | None = None) -> SignPropertyRun:
    """Sample contexts until ``trials`` of them pass the risk and cross filters.

    A trial counts when the empirical risk of ``w_alpha`` is no larger than
    that of ``w_beta`` and the cross condition holds. Each candidate uses its
    own counter-derived stream so results do not depend on scheduling.
    """
    if int(trials) != trials or trials < 1:
        raise ValueError(f"trials must be a positive integer, got {trials!r}")
    if max_candidates is None:
        max_candidates = 100 * int(trials)
    filtered = violations = k = 0
    min_psi = np.inf
    while filtered < trials:
        if k >= max_candidates:
            raise RuntimeError(f"only {filtered} of {trials} trials passed the filter")
        rng = make_rng(seed, "label_sign", d, k)
        k += 1
        context, hyper, wa, wb = _sign_candidate(rng, d)
        if empirical_risk_gap(context, wa, wb) < 0.0:
            continue
        value, _ = cross_term(context.xs, context.ys, wa, wb)
        if value < 0.0:
            continue
        filtered += 1
        psi = psi_w_pair(context, hyper, wa, wb)
        min_psi = min(min_psi, psi)
        if psi < C.PSI_W_FLOOR:
            violations += 1
    return SignPropertyRun(violations, filtered, k, float(min_psi))


def theorem1_property_trial(seed, trials: int) -> int:
    """Number of ``Psi_w < -1e-10`` violations over ``trials`` filtered d=1 contexts."""
    return run_sign_property(seed, trials, d=1).violations


def exploratory_violation_rate(seed, trials: int, d: int = 2) -> float:
    """Fraction of filtered Gaussian-design contexts at ``d >= 2`` with ``Psi_w < 0``.

    The eigenvalue and identity conditions cannot hold here, so this only
    measures; nothing is asserted.
    """
    run = run_sign_property(seed, trials, d=d)
    return run.violations / run.filtered_trials


def lemma1_limit_check(mu_star, tau_x, mu_alpha, mu_beta, hyper: Hyper, T_schedule, seed):
    """Track ``Psi_mu(alpha, beta)`` along a context-length schedule.

    Returns a list of ``(T, psi_mu_pair, analytic_limit)``; each T uses a
    fresh draw of T+1 inputs from ``N(mu_star, tau_x^2 I)``.
    """
    mu_star = np.asarray(mu_star, float)
    mu_alpha = np.asarray(mu_alpha, float)
    mu_beta = np.asarray(mu_beta, float)
    gap = float(np.sum((mu_beta - mu_star) ** 2) - np.sum((mu_alpha - mu_star) ** 2))
    if gap < 0.0:
        raise ValueError("mu_beta must be at least as far from mu_star as mu_alpha")
    if tau_x < 0:
        raise ValueError("tau_x must be non-negative")
    limit = gap / (2.0 * hyper.sigma_mu**2)
    d = mu_star.shape[0]
    ca = Component(0.5, mu_alpha, np.zeros(d))
    cb = Component(0.5, mu_beta, np.zeros(d))
    rng = as_rng(seed)
    out = []
    for T in T_schedule:
        T = int(T)
        pts = mu_star + tau_x * rng.standard_normal((T + 1, d))
        ctx = ContextSequence(pts[:T], np.zeros(T), pts[T])
        psi = log_evidence_mu(ca, ctx, hyper) - log_evidence_mu(cb, ctx, hyper)
        out.append((T, psi, limit))
    return out


def _gauss_loglik(resid_sq_sum: np.ndarray, var: float) -> np.ndarray:
    return -0.5 * resid_sq_sum / var


def mc_bayes_oracle(
    prior: MixturePrior,
    context: ContextSequence,
    n_samples: int,
    seed,
    chunk: int = 250_000,
    n_batches: int = 200,
    n_boot: int = 400,
) -> OracleEstimate:
    """Self-normalised importance sampling of ``E[<query, w> | context]``.

    Proposals come straight from the generative prior over ``(m, mu, w)``;
    the weights are the likelihoods of all T+1 inputs and the T labels. The
    standard error is a bootstrap over ``n_batches`` contiguous sample blocks.
    """
    if int(n_samples) != n_samples or n_samples < 1000:
        raise ValueError("n_samples must be an integer >= 1000")
    n_samples = int(n_samples)
    if prior.dim != context.dim:
        raise ValueError("dimension mismatch between prior and context")
    rng = as_rng(seed)
    h = prior.hyper
    d = prior.dim
    pts = context.all_inputs()
    X, y, q = context.xs, context.ys, context.query
    centers_mu = prior.mus
    centers_w = prior.ws

    logw = np.empty(n_samples)
    f = np.empty(n_samples)
    start = 0
    while start < n_samples:
        n = min(chunk, n_samples - start)
        m = rng.choice(prior.n_components, size=n, p=prior.pis)
        mu = centers_mu[m] + h.sigma_mu * rng.standard_normal((n, d))
        w = centers_w[m] + h.sigma_w * rng.standard_normal((n, d))
        sq_x = np.zeros(n)
        for p in pts:
            sq_x += np.sum((mu - p) ** 2, axis=1)
        sq_y = np.zeros(n)
        for xi, yi in zip(X, y):
            sq_y += (yi - w @ xi) ** 2
        logw[start : start + n] = _gauss_loglik(sq_x, h.sigma_x**2) + _gauss_loglik(
            sq_y, h.sigma_y**2
        )
        f[start : start + n] = w @ q
        start += n

    weights = np.exp(logw - logw.max())
    total = weights.sum()
    ess = float(total**2 / np.sum(weights**2))
    if ess < C.MIN_ESS:
        raise LowConfidenceError(ess, n_samples)
    mean = float(np.sum(weights * f) / total)

    edges = np.linspace(0, n_samples, n_batches + 1).astype(int)
    bw = np.add.reduceat(weights, edges[:-1])
    bwf = np.add.reduceat(weights * f, edges[:-1])
    picks = rng.integers(0, n_batches, size=(n_boot, n_batches))
    boot = bwf[picks].sum(axis=1) / bw[picks].sum(axis=1)
    return OracleEstimate(
        mean=mean,
        std_error=float(np.std(boot, ddof=1)),
        n_samples=n_samples,
        effective_sample_size=ess,
    )


def _trapezoid_log_weights(n: int, step: float) -> np.ndarray:
    wts = np.full(n, step)
    wts[0] = wts[-1] = step / 2.0
    return np.log(wts)


def quadrature_oracle_1d(prior: MixturePrior, context: ContextSequence, grid_points: int) -> float:
    """``E[y_query | context]`` for d = 1 by tensor-grid quadrature over (mu, w).

    Each component is integrated on ``center +/- 8`` prior standard
    deviations with the trapezoid rule; components are combined in log space.
    """
    if prior.dim != 1 or context.dim != 1:
        raise ValueError("quadrature oracle is only defined for d = 1")
    if grid_points < C.QUADRATURE_MIN_POINTS:
        raise ValueError(f"grid_points must be at least {C.QUADRATURE_MIN_POINTS}")
    h = prior.hyper
    pts = context.all_inputs()[:, 0]
    X = context.xs[:, 0]
    y = context.ys
    q = float(context.query[0])
    half = C.QUADRATURE_HALF_WIDTH

    joints = []
    for comp in prior.components:
        mu_grid = np.linspace(comp.mu[0] - half * h.sigma_mu, comp.mu[0] + half * h.sigma_mu, grid_points)
        w_grid = np.linspace(comp.w[0] - half * h.sigma_w, comp.w[0] + half * h.sigma_w, grid_points)
        lq_mu = _trapezoid_log_weights(grid_points, mu_grid[1] - mu_grid[0])
        lq_w = _trapezoid_log_weights(grid_points, w_grid[1] - w_grid[0])

        log_prior_mu = -0.5 * ((mu_grid - comp.mu[0]) / h.sigma_mu) ** 2 - np.log(h.sigma_mu)
        log_prior_w = -0.5 * ((w_grid - comp.w[0]) / h.sigma_w) ** 2 - np.log(h.sigma_w)
        log_lik_mu = -0.5 * ((pts[None, :] - mu_grid[:, None]) ** 2).sum(axis=1) / h.sigma_x**2
        log_lik_w = -0.5 * ((y[None, :] - w_grid[:, None] * X[None, :]) ** 2).sum(axis=1) / h.sigma_y**2

        a = lq_mu + log_prior_mu + log_lik_mu
        b = lq_w + log_prior_w + log_lik_w
        joints.append((np.log(comp.pi) + a[:, None] + b[None, :], w_grid))

    z = logsumexp([logsumexp(j) for j, _ in joints])
    expected_w = 0.0
    for joint, w_grid in joints:
        expected_w += float(np.sum(np.exp(joint - z) * w_grid[None, :]))
    return q * expected_w
