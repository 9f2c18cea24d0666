import numpy as np
import pytest

from icl_lab import constants as C
from icl_lab.baselines import (
    NO_MATCH,
    DivergenceError,
    chance_accuracy,
    estimate_then_retrieve,
    gd_fit,
    gradient_check,
    init_params,
    ols_min_norm,
    retrieval_accuracy,
    retrieval_oracle,
    ridge_fit,
)
from icl_lab.prior import Component, ContextSequence, Hyper, posterior_w_mean
from icl_lab.seeding import as_rng
from icl_lab.tasks import KINDS, RetrievalInstance, make_predict_retrieve_instance, sample_icl_batch, sample_task


def _linear_context(d, T, seed):
    task = sample_task("linear", d, None, seed)
    ctx, _ = sample_icl_batch(task, T, seed + 1000)
    return task.params["w"], ctx


# -- gradient descent ------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    assert gradient_check(kind, 100, 0) < C.GRAD_REL_TOL


@pytest.mark.parametrize("kind", ["linear", "relu_nn", "linear_plus_quadratic"])
def test_zero_steps_returns_initialisation(kind):
    _, ctx = _linear_context(4, 6, 0)
    model = gd_fit(kind, ctx, steps=0, seed=7, d_prime=5)
    expected = init_params(kind, 4, 5 if kind == "relu_nn" else None, as_rng(7))
    for k, v in expected.items():
        np.testing.assert_array_equal(model.params[k], v)
    assert model.training_log == [(0, model.final_loss)]


@pytest.mark.xfail(strict=True, reason="1000 steps at lr 1e-3 leave about 2e-2 relative MSE at d=20")
def test_linear_gd_converges_at_default_budget():
    w, ctx = _linear_context(20, 40, 0)
    assert gd_fit("linear", ctx).final_loss < 1e-2 * (w @ w)


def test_linear_gd_converges_with_longer_budget():
    for seed in range(5):
        w, ctx = _linear_context(20, 40, seed)
        assert gd_fit("linear", ctx, lr=1e-2, steps=5000, seed=seed).final_loss < 1e-8 * (w @ w)


def test_gd_reports_divergence():
    _, ctx = _linear_context(5, 10, 0)
    with pytest.raises(DivergenceError):
        gd_fit("cubic", ContextSequence(10 * ctx.xs, ctx.ys, ctx.query), lr=1.0, steps=50)


def test_gd_is_seed_deterministic_and_serialises():
    _, ctx = _linear_context(3, 8, 2)
    a = gd_fit("sigmoid_nn", ctx, seed=1, d_prime=4, steps=30)
    b = gd_fit("sigmoid_nn", ctx, seed=1, d_prime=4, steps=30)
    assert a.to_dict() == b.to_dict()
    assert np.all(np.isfinite(a.predict(ctx.xs)))
    assert isinstance(a.predict(ctx.query), float)


def test_gd_preconditions():
    _, ctx = _linear_context(3, 4, 0)
    with pytest.raises(ValueError):
        gd_fit("linear", ContextSequence([], [], [0, 0, 0]))
    with pytest.raises(ValueError):
        gd_fit("bogus", ctx)
    with pytest.raises(ValueError):
        gd_fit("linear", ctx, steps=-1)


# -- least squares and ridge -----------------------------------------------------

def test_ols_recovers_weights_when_overdetermined():
    w, ctx = _linear_context(8, 20, 3)
    np.testing.assert_allclose(ols_min_norm(ctx), w, atol=1e-8)


def test_ols_underdetermined_interpolates_with_minimal_norm():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d, T = 8, int(rng.integers(1, 8))
        X = rng.standard_normal((T, d))
        y = rng.standard_normal(T)
        w = ols_min_norm(ContextSequence(X, y, np.zeros(d)))
        np.testing.assert_allclose(X @ w, y, atol=1e-10)
        # any other interpolant differs by a null-space vector, which can only add norm
        null = np.linalg.svd(X)[2][T:]
        other = w + null.T @ rng.standard_normal(d - T)
        np.testing.assert_allclose(X @ other, y, atol=1e-10)
        assert np.linalg.norm(w) <= np.linalg.norm(other) + 1e-12
        np.testing.assert_allclose(null @ w, 0.0, atol=1e-10)


def test_ridge_shrinks_to_zero():
    _, ctx = _linear_context(5, 10, 1)
    assert np.linalg.norm(ridge_fit(ctx, 1e12)) < 1e-9


def test_ridge_matches_zero_centered_posterior_mean():
    _, ctx = _linear_context(4, 9, 5)
    for delta_w in (0.1, 1.0, 7.0):
        hyper = Hyper(1.0, 1.0, 1.0, float(np.sqrt(delta_w)))
        comp = Component(1.0, np.zeros(4), np.zeros(4))
        np.testing.assert_allclose(
            ridge_fit(ctx, 1.0 / hyper.delta_w), posterior_w_mean(comp, ctx, hyper), rtol=1e-10, atol=1e-12
        )


def test_tiny_ridge_matches_ols():
    _, ctx = _linear_context(6, 15, 2)
    np.testing.assert_allclose(ridge_fit(ctx, 1e-12), ols_min_norm(ctx), atol=1e-6)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_ridge_rejects_nonpositive_lambda(lam):
    _, ctx = _linear_context(3, 4, 0)
    with pytest.raises(ValueError):
        ridge_fit(ctx, lam)


# -- retrieval -------------------------------------------------------------------

def _instance(tokens, labels, query_token, d=3):
    table = np.arange(40 * d, dtype=float).reshape(40, d)
    tokens, labels = np.asarray(tokens), np.asarray(labels)
    target = int(labels[tokens == query_token][-1]) if np.any(tokens == query_token) else 39
    return RetrievalInstance(
        kind="retrieval",
        embedding_id="hand",
        xs=table[tokens],
        ys=table[labels],
        query=table[query_token],
        token_indices=tokens,
        label_indices=labels,
        query_token=query_token,
        target_index=target,
        shift=0,
        metadata={},
    )


def test_oracle_copies_the_paired_label():
    inst = _instance([1, 2, 3], [11, 12, 13], 2)
    out = retrieval_oracle(inst)
    assert out.label_index == 12 and out.position == 1 and not out.conflicting
    np.testing.assert_array_equal(out.label, inst.ys[1])


def test_oracle_absent_token_is_no_match():
    out = retrieval_oracle(_instance([1, 2, 3], [11, 12, 13], 5))
    assert out is NO_MATCH and not out


def test_oracle_conflicting_labels_latest_wins():
    out = retrieval_oracle(_instance([4, 1, 4], [20, 11, 21], 4))
    assert out.label_index == 21 and out.position == 2 and out.conflicting


def _batch(kind, n, seed0=0):
    return [make_predict_retrieve_instance(1000, 20, (100, 200), 50, kind, seed0 + k) for k in range(n)]


def test_known_weights_reach_label_presence():
    insts = _batch("linear", 200)
    acc = retrieval_accuracy(insts, lambda i: estimate_then_retrieve(i, w=i.metadata["w"]))
    present = np.mean([i.label_present() for i in insts])
    assert acc <= present
    assert acc >= present - 0.05


def test_mismatched_features_are_near_chance():
    insts = _batch("quadratic", 200)
    acc = retrieval_accuracy(insts, estimate_then_retrieve)
    assert abs(acc - chance_accuracy(insts)) <= 0.10


def test_learned_estimator_beats_chance_on_linear_data():
    insts = _batch("linear", 200)
    assert retrieval_accuracy(insts, estimate_then_retrieve) > 3 * chance_accuracy(insts)


def test_estimator_returns_no_match_when_bucket_missing():
    inst = make_predict_retrieve_instance(1000, 20, (100, 200), 50, "linear", 0)
    far = 1e6 * np.asarray(inst.metadata["w"])
    out = estimate_then_retrieve(inst, context=ContextSequence(inst.xs, inst.label_indices + 0.5, far))
    assert out is NO_MATCH


def test_estimator_rejects_bad_lambda():
    with pytest.raises(ValueError):
        estimate_then_retrieve(_batch("linear", 1)[0], lam=0.0)
