import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icl_lab import constants as C
from icl_lab.oracles import (
    LowConfidenceError,
    check_assumption2,
    cross_term,
    empirical_risk_gap,
    exploratory_violation_rate,
    lemma1_limit_check,
    mc_bayes_oracle,
    psi_w_pair,
    quadrature_oracle_1d,
    run_sign_property,
    theorem1_property_trial,
)
from icl_lab.prior import (
    Component,
    ContextSequence,
    Hyper,
    MixturePrior,
    posterior,
    posterior_w_mean,
    sample_pretrain_sequence,
)

from conftest import random_prior

UNIT = Hyper(1.0, 1.0, 1.0, 1.0)


# -- context conditions --------------------------------------------------------

def test_pm_one_design_satisfies_eigen_and_identity_conditions():
    ctx = ContextSequence([[1.0], [-1.0], [1.0]], [0.3, -2.0, 1.1], [0.0])
    rep = check_assumption2(ctx, UNIT, [1.0], [0.5])
    assert rep.cond_min_eig == (True, True, True)
    assert rep.cond_identity


def test_rank_one_inputs_fail_eigen_condition_in_2d():
    ctx = ContextSequence([[3.0, 4.0]], [1.0], [0.0, 0.0])
    rep = check_assumption2(ctx, UNIT, [1.0, 0.0], [0.0, 1.0])
    assert rep.cond_min_eig == (False,)
    assert not rep.all_hold


def test_identity_condition_fails_off_the_unit_design():
    ctx = ContextSequence([[1.0], [2.0]], [1.0, 1.0], [0.0])
    assert not check_assumption2(ctx, UNIT, [1.0], [0.0]).cond_identity


def test_zero_labels_are_skipped_in_cross_term():
    xs = np.array([[1.0], [-1.0], [1.0]])
    value, skipped = cross_term(xs, np.array([1.0, 0.0, 2.0]), np.array([1.0]), np.array([0.0]))
    assert skipped == (1,)
    assert np.isfinite(value)


def test_conditions_need_labelled_pairs():
    with pytest.raises(ValueError):
        check_assumption2(ContextSequence([], [], [0.0]), UNIT, [0.0], [1.0])


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 20))
def test_checker_is_literal_on_pm_one_designs(seed, T):
    rng = np.random.default_rng(seed)
    xs = rng.choice([-1.0, 1.0], size=(T, 1))
    ys = rng.standard_normal(T) + 0.1
    ctx = ContextSequence(xs, ys, [0.0])
    hyper = Hyper(1.0, float(np.exp(rng.uniform(-1, 1))), 1.0, float(np.exp(rng.uniform(-1, 1))))
    rep = check_assumption2(ctx, hyper, rng.standard_normal(1), rng.standard_normal(1))
    if rep.cond_cross:
        assert rep.all_hold


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 20))
def test_label_term_is_shrunk_risk_gap_on_pm_one_designs(seed, T):
    rng = np.random.default_rng(seed)
    ctx = ContextSequence(rng.choice([-1.0, 1.0], size=(T, 1)), 3.0 * rng.standard_normal(T), [0.0])
    hyper = Hyper(1.0, float(np.exp(rng.uniform(-1, 1))), 1.0, float(np.exp(rng.uniform(-1, 1))))
    wa, wb = rng.standard_normal(1), rng.standard_normal(1)
    shrink = T * hyper.delta_w / (1.0 + T * hyper.delta_w)
    expected = shrink * empirical_risk_gap(ctx, wa, wb) / (2.0 * hyper.sigma_w**2)
    assert psi_w_pair(ctx, hyper, wa, wb) == pytest.approx(expected, rel=1e-9, abs=1e-12)


# -- sign property -------------------------------------------------------------

def test_equal_weights_never_violate():
    ctx = ContextSequence([[1.0], [-1.0]], [2.0, 0.5], [0.0])
    assert psi_w_pair(ctx, UNIT, [0.7], [0.7]) == 0.0


def test_sign_property_holds_on_filtered_trials():
    assert theorem1_property_trial(1, 2000) == 0


def test_sign_property_is_seed_deterministic():
    assert run_sign_property(5, 300) == run_sign_property(5, 300)


@pytest.mark.parametrize("trials", [0, -3, 2.5])
def test_sign_property_rejects_bad_trial_counts(trials):
    with pytest.raises(ValueError):
        theorem1_property_trial(0, trials)


def test_exploratory_rate_is_a_fraction():
    rate = exploratory_violation_rate(0, 200, d=3)
    assert 0.0 <= rate <= 1.0


# -- input-term limit ----------------------------------------------------------

def test_equal_centers_give_zero_limit():
    rows = lemma1_limit_check([0.0, 0.0], 1.0, [1.0, 1.0], [1.0, 1.0], UNIT, [1, 10, 100], 0)
    for _, psi, limit in rows:
        assert limit == 0.0
        assert psi == pytest.approx(0.0, abs=1e-12)


def test_deterministic_inputs_match_exact_formula():
    hyper = Hyper(1.3, 1.0, 0.7, 1.0)
    star, a, b = np.zeros(2), np.array([0.5, 0.0]), np.array([1.0, -1.0])
    gap = np.sum((b - star) ** 2) - np.sum((a - star) ** 2)
    for T, psi, _ in lemma1_limit_check(star, 0.0, a, b, hyper, [0, 3, 50], 0):
        exact = (T + 1) * gap / (2 * hyper.sigma_x**2 * (1 + (T + 1) * hyper.delta_mu))
        assert psi == pytest.approx(exact, rel=1e-12)


def test_documented_instance_approaches_one_half():
    reps = [
        lemma1_limit_check([0, 0, 0], 1.0, [0, 0, 0], [1, 0, 0], UNIT, [10000], seed)[0][1] for seed in range(20)
    ]
    assert np.mean(reps) == pytest.approx(0.5, rel=C.ASYMPTOTIC_REL_TOL)


def test_limit_check_requires_ordered_centers():
    with pytest.raises(ValueError):
        lemma1_limit_check([0.0], 1.0, [2.0], [1.0], UNIT, [10], 0)


# -- Monte-Carlo oracle ----------------------------------------------------------

def test_mc_oracle_is_deterministic():
    prior = random_prior(np.random.default_rng(0), 2, 2)
    ctx = ContextSequence(np.ones((2, 2)), [1.0, 2.0], [0.5, -0.5])
    a = mc_bayes_oracle(prior, ctx, 20000, 9)
    b = mc_bayes_oracle(prior, ctx, 20000, 9)
    assert a == b


def test_mc_oracle_degenerate_posterior():
    w1 = np.array([1.5, -0.5])
    prior = MixturePrior((Component(1.0, [0.0, 0.0], w1),), Hyper(1.0, 1.0, 1.0, 1e-4))
    rng = np.random.default_rng(1)
    X = rng.standard_normal((4, 2))
    ctx = ContextSequence(X, X @ w1, [1.0, 2.0])
    est = mc_bayes_oracle(prior, ctx, 100_000, 3)
    assert abs(est.mean - float(ctx.query @ w1)) <= C.MC_SIGMA * est.std_error + 1e-12


def test_mc_oracle_matches_closed_form_small_instance():
    rng = np.random.default_rng(4)
    prior = random_prior(rng, 2, 2)
    ctx, _ = sample_pretrain_sequence(prior, 4, rng)
    est = mc_bayes_oracle(prior, ctx, 1_000_000, 5)
    assert abs(est.mean - posterior(prior, ctx).prediction) <= C.MC_SIGMA * est.std_error


def test_mc_oracle_withholds_low_confidence_estimates():
    prior = MixturePrior((Component(1.0, [0.0], [0.0]),), Hyper(0.01, 0.01, 1.0, 1.0))
    ctx = ContextSequence(np.full((6, 1), 3.0), np.full(6, 9.0), [3.0])
    with pytest.raises(LowConfidenceError) as info:
        mc_bayes_oracle(prior, ctx, 2000, 0)
    assert info.value.ess < C.MIN_ESS


def test_mc_oracle_rejects_tiny_budgets():
    prior = random_prior(np.random.default_rng(0), 1, 1)
    with pytest.raises(ValueError):
        mc_bayes_oracle(prior, ContextSequence([], [], [0.0]), 999, 0)


# -- quadrature oracle -----------------------------------------------------------

def _d1_instance(seed, M, T):
    rng = np.random.default_rng(seed)
    prior = random_prior(rng, 1, M)
    X = rng.standard_normal((T, 1))
    return prior, ContextSequence(X, X[:, 0] * 0.7 + 0.1 * rng.standard_normal(T), rng.standard_normal(1))


def test_quadrature_single_component_is_conjugate():
    prior, ctx = _d1_instance(2, 1, 5)
    expected = float(ctx.query @ posterior_w_mean(prior.components[0], ctx, prior.hyper))
    assert quadrature_oracle_1d(prior, ctx, 512) == pytest.approx(expected, abs=1e-6)


def test_quadrature_sign_symmetry():
    comps = (Component(0.5, [1.0], [2.0]), Component(0.5, [-1.0], [-2.0]))
    prior = MixturePrior(comps, UNIT)
    ctx = ContextSequence([[0.3], [1.2]], [0.5, 2.0], [0.8])
    flipped = ContextSequence([[-0.3], [-1.2]], [0.5, 2.0], [-0.8])
    # (mu, w) -> (-mu, -w) maps the prior to itself and x -> -x keeps labels
    assert quadrature_oracle_1d(prior, ctx, 512) == pytest.approx(quadrature_oracle_1d(prior, flipped, 512), abs=1e-8)


def test_quadrature_grid_refinement_converged():
    prior, ctx = _d1_instance(3, 3, 6)
    coarse = quadrature_oracle_1d(prior, ctx, 512)
    fine = quadrature_oracle_1d(prior, ctx, 1024)
    assert abs(coarse - fine) < 1e-8


def test_quadrature_matches_closed_form():
    for seed in range(10):
        prior, ctx = _d1_instance(seed, 3, 4)
        assert quadrature_oracle_1d(prior, ctx, 512) == pytest.approx(
            posterior(prior, ctx).prediction, abs=C.QUADRATURE_MATCH_TOL
        )


def test_quadrature_preconditions():
    prior, ctx = _d1_instance(0, 2, 3)
    with pytest.raises(ValueError):
        quadrature_oracle_1d(prior, ctx, 16)
    prior2 = random_prior(np.random.default_rng(0), 2, 2)
    with pytest.raises(ValueError):
        quadrature_oracle_1d(prior2, ContextSequence([], [], [0.0, 0.0]), 512)
