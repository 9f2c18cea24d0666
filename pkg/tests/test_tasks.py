import numpy as np
import pytest

from icl_lab.tasks import (
    KINDS,
    IndexOverflowError,
    RetrievalInstance,
    TaskFunction,
    cache_dir,
    embedding_id,
    embedding_table,
    make_predict_retrieve_instance,
    make_retrieval_instance,
    make_word_classification_instance,
    read_jsonl,
    sample_icl_batch,
    sample_task,
    signed_sqrt,
    write_jsonl,
)


def _task(kind, d=5, d_prime=7, seed=0):
    return sample_task(kind, d, d_prime if kind in ("relu_nn", "sigmoid_nn") else None, seed)


# -- function classes ----------------------------------------------------------

def test_linear_at_origin_is_zero():
    assert _task("linear")(np.zeros(5)) == 0.0


def test_quadratic_hand_case():
    d = 6
    task = TaskFunction("quadratic", {"w": np.ones(d)}, d)
    x = np.array([1.0, -1.0] * 3)
    assert task(x) == pytest.approx(d)


def test_relu_kills_negative_inputs():
    d = 4
    task = TaskFunction("relu_nn", {"w1": np.ones(d), "w2": np.eye(d)}, d, d)
    assert task(-np.abs(np.random.default_rng(0).standard_normal(d)) - 0.1) == 0.0


def test_linear_superposition():
    task = _task("linear", seed=3)
    rng = np.random.default_rng(1)
    x, x2 = rng.standard_normal((2, 5))
    assert abs(task(x + x2) - task(x) - task(x2)) <= 1e-9


def test_quadratic_is_even():
    task = _task("quadratic", seed=3)
    x = np.random.default_rng(2).standard_normal(5)
    assert abs(task(x) - task(-x)) <= 1e-9


def test_signed_sqrt_is_odd_and_inverts_signed_square():
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(signed_sqrt(x), -signed_sqrt(-x))
    np.testing.assert_allclose(signed_sqrt(np.sign(x) * x * x), x)


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_round_trips(kind):
    task = _task(kind)
    again = TaskFunction.from_dict(task.to_dict())
    X = np.random.default_rng(0).standard_normal((4, 5))
    np.testing.assert_array_equal(task(X), again(X))


def test_network_kinds_need_hidden_width():
    with pytest.raises(ValueError):
        sample_task("relu_nn", 5)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        sample_task("cosine", 5)


def test_task_rejects_wrong_input_dimension():
    with pytest.raises(ValueError):
        _task("linear")(np.zeros(3))


def test_linear_batch_labels_are_exact():
    task = _task("linear", d=20)
    ctx, yq = sample_icl_batch(task, 30, 4)
    np.testing.assert_array_equal(ctx.ys, ctx.xs @ task.params["w"])
    assert yq == pytest.approx(float(ctx.query @ task.params["w"]), abs=1e-12)


def test_batches_are_seed_deterministic():
    task = _task("relu_nn")
    a, ya = sample_icl_batch(task, 10, 8)
    b, yb = sample_icl_batch(task, 10, 8)
    np.testing.assert_array_equal(a.xs, b.xs)
    assert ya == yb


def test_linear_label_variance_matches_weight_norm():
    task = _task("linear", d=20, seed=11)
    ctx, _ = sample_icl_batch(task, 1000, 12)
    w = task.params["w"]
    assert np.var(ctx.ys) == pytest.approx(w @ w, rel=0.15)


def test_batch_with_shifted_inputs():
    task = _task("linear", d=3)
    ctx, _ = sample_icl_batch(task, 2000, 0, input_mean=[-4, -4, -4], input_std=0.5)
    np.testing.assert_allclose(ctx.xs.mean(axis=0), [-4, -4, -4], atol=0.05)
    np.testing.assert_allclose(ctx.xs.std(axis=0), 0.5, rtol=0.05)


# -- embedding cache -----------------------------------------------------------

def test_cache_honours_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ICL_LAB_CACHE", str(tmp_path / "emb"))
    assert cache_dir() == tmp_path / "emb"
    table = embedding_table(50, 4, 1)
    path = tmp_path / "emb" / f"{embedding_id(50, 4, 1)}.npy"
    assert path.exists()
    np.testing.assert_array_equal(np.load(path), table)
    np.testing.assert_array_equal(embedding_table(50, 4, 1), table)
    np.testing.assert_array_equal(embedding_table(50, 4, 1, use_cache=False), table)
    assert not table.flags.writeable


def test_distinct_seeds_give_distinct_tables():
    assert not np.array_equal(embedding_table(20, 3, 0), embedding_table(20, 3, 1))


def test_cache_skips_disk_when_disabled(tmp_path, monkeypatch):
    monkeypatch.setenv("ICL_LAB_CACHE", str(tmp_path / "none"))
    embedding_table(20, 3, 0, use_cache=False)
    assert not (tmp_path / "none").exists()


# -- retrieval generators ------------------------------------------------------

def test_copy_task_label_range():
    for seed in range(20):
        inst = make_retrieval_instance(1000, 8, (50, 150), 30, seed)
        assert np.all((inst.label_indices >= 50) & (inst.label_indices < 155))
        assert 50 <= inst.target_index < 155
        assert np.all(inst.token_indices < 5)


def test_copy_task_map_is_a_function_of_shift():
    inst = make_retrieval_instance(1000, 8, (50, 150), 40, 3)
    np.testing.assert_array_equal(inst.label_indices, inst.token_indices + inst.shift)
    table = embedding_table(1000, 8, 0)
    np.testing.assert_array_equal(inst.xs, table[inst.token_indices])
    np.testing.assert_array_equal(inst.ys, table[inst.label_indices])


def test_copy_task_shift_overflow_is_an_error():
    with pytest.raises(IndexOverflowError):
        make_retrieval_instance(100, 4, (50, 95), 10, 0)


def test_generators_are_deterministic_and_regenerable():
    a = make_predict_retrieve_instance(1000, 20, (100, 200), 50, "linear", 7)
    b = make_predict_retrieve_instance(1000, 20, (100, 200), 50, "linear", 7)
    assert a.to_json() == b.to_json()
    m = a.metadata
    c = make_predict_retrieve_instance(m["N"], m["d"], m["s_range"], m["T"], m["function_kind"], m["seed"],
                                       m["embedding_seed"])
    assert c.to_json() == a.to_json()


def test_zero_weight_collapses_to_one_class(monkeypatch):
    inst = make_predict_retrieve_instance(1000, 20, (100, 200), 50, "linear", 1)
    w = np.zeros(20)
    labels = np.floor(0.4 * (inst.xs @ w)).astype(int) + inst.shift
    assert set(labels) == {inst.shift}


def test_predict_retrieve_labels_follow_the_bucket_rule():
    inst = make_predict_retrieve_instance(1000, 20, (100, 200), 50, "quadratic", 2)
    w = np.asarray(inst.metadata["w"])
    expected = np.floor(0.4 * ((inst.xs**2) @ w)).astype(int) + inst.shift
    np.testing.assert_array_equal(inst.label_indices, expected)


def test_target_label_usually_in_context():
    present = [make_predict_retrieve_instance(1000, 20, (100, 200), 50, "linear", k).label_present()
               for k in range(1000)]
    assert np.mean(present) >= 0.95


def test_predict_retrieve_margin_enforced():
    with pytest.raises(IndexOverflowError):
        make_predict_retrieve_instance(200, 20, (100, 190), 10, "linear", 0)


def test_predict_retrieve_rejects_other_kinds():
    with pytest.raises(ValueError):
        make_predict_retrieve_instance(1000, 20, (100, 200), 10, "cubic", 0)


def test_word_classification_single_class():
    inst = make_word_classification_instance(N=500, d=8, d_prime=4, C=1, offset=100, T=20, seed=0)
    assert set(inst.label_indices) == {100}


def test_word_classification_defaults_and_labels():
    inst = make_word_classification_instance(seed=3)
    assert inst.metadata["N"] == 10000 and inst.metadata["d"] == 20
    W_rows = embedding_table(10000, 20, 0)[inst.token_indices][:, :10]
    assert np.all((inst.label_indices >= 1000) & (inst.label_indices < 1005))
    assert W_rows.shape == (50, 10)


def test_word_classification_ties_go_to_lowest_index(monkeypatch):
    import icl_lab.tasks as tasks

    real = tasks.embedding_table
    monkeypatch.setattr(tasks, "embedding_table", lambda N, d, s, c=True: np.zeros_like(real(N, d, s, c)))
    inst = make_word_classification_instance(N=200, d=6, d_prime=3, C=4, offset=50, T=10, seed=1)
    assert set(inst.label_indices) == {50}
    assert inst.target_index == 50


def test_jsonl_round_trip(tmp_path):
    insts = [make_retrieval_instance(500, 6, (10, 20), 12, k) for k in range(3)]
    path = tmp_path / "x.jsonl"
    write_jsonl(insts, path)
    back = read_jsonl(path)
    assert [b.to_json() for b in back] == [i.to_json() for i in insts]


def test_unknown_schema_rejected():
    line = make_retrieval_instance(500, 6, (10, 20), 12, 0).to_json().replace("retrieval/1", "retrieval/9")
    with pytest.raises(ValueError):
        RetrievalInstance.from_json(line)
