import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcnp import baselines, data
from molcnp.errors import EmptyTrainingSet, KTooLarge, UnknownFunction

from oracles import reference_candidates, reference_neighbors, reference_tree, reference_tree_predict


# --- random forest ----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from([0.34, 0.5, 1.0]))
def test_forest_equals_brute_force_reference(seed, min_leaf, fraction):
    rng = np.random.default_rng(seed)
    X = (rng.random((20, 12)) < 0.4).astype(np.uint8)
    y = rng.integers(-5, 6, size=20).astype(np.float64)
    Q = (rng.random((15, 12)) < 0.4).astype(np.uint8)
    config = baselines.ForestConfig(n_estimators=5, max_features=fraction, min_samples_leaf=min_leaf)
    model = baselines.rf_fit(X, y, config, np.random.default_rng(seed))
    k = baselines.n_candidate_features(12, fraction)
    plan = baselines.forest_plan(20, config, np.random.default_rng(seed))
    refs = [reference_tree(X.tolist(), y.tolist(), rows, k, min_leaf, tree_seed) for rows, tree_seed in plan]
    expected = []
    for q in Q.tolist():
        total = 0.0
        for tree in refs:
            total += reference_tree_predict(tree, q)
        expected.append(total / len(refs))
    assert baselines.rf_predict(model, Q).tolist() == expected


def test_candidate_features_match_reference():
    from molcnp import kernels

    for seed, counter in [(1, 0), (2**62, 7), (12345, 999)]:
        got = kernels.candidate_features(seed, counter, 50, 17)
        assert got.tolist() == reference_candidates(seed, counter, 50, 17)


def test_constant_labels_give_single_leaf():
    X = (np.random.default_rng(0).random((30, 16)) < 0.5).astype(np.uint8)
    model = baselines.rf_fit(X, np.full(30, 2.5), baselines.ForestConfig(n_estimators=3), np.random.default_rng(0))
    assert all(t.n_nodes == 1 for t in model.trees)
    assert np.all(baselines.rf_predict(model, X) == 2.5)


def test_separating_bit_is_root():
    rng = np.random.default_rng(1)
    X = (rng.random((40, 10)) < 0.5).astype(np.uint8)
    X[:, 6] = np.arange(40) % 2
    y = np.where(X[:, 6] == 1, 5.0, -5.0)
    config = baselines.ForestConfig(n_estimators=4, max_features=1.0, bootstrap=False)
    model = baselines.rf_fit(X, y, config, rng)
    for tree in model.trees:
        assert tree.feature[0] == 6 and tree.n_nodes == 3
    assert np.array_equal(baselines.rf_predict(model, X), y)


def test_forest_averages_trees():
    leaf = lambda v: baselines.Tree(np.array([-1]), np.array([-1]), np.array([-1]), np.array([v]))
    model = baselines.ForestModel([leaf(1.0), leaf(3.0)], 4)
    assert np.array_equal(baselines.rf_predict(model, np.zeros((2, 4))), [2.0, 2.0])


def test_forest_seeded_and_rejects_empty():
    rng = np.random.default_rng(2)
    X = (rng.random((25, 16)) < 0.5).astype(np.uint8)
    y = rng.normal(size=25)
    cfg = baselines.ForestConfig(n_estimators=6)
    a = baselines.rf_predict(baselines.rf_fit(X, y, cfg, np.random.default_rng(3)), X)
    b = baselines.rf_predict(baselines.rf_fit(X, y, cfg, np.random.default_rng(3)), X)
    assert np.array_equal(a, b)
    with pytest.raises(EmptyTrainingSet):
        baselines.rf_fit(np.zeros((0, 4)), np.zeros(0))


# --- nearest neighbours -----------------------------------------------------


def test_knn_example():
    query = np.zeros((1, 4), dtype=np.uint8)
    train = np.array([[1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]], dtype=np.uint8)
    assert baselines.knn_fit_predict(train, [0.0, 4.0, 8.0], query, k=2)[0] == 2.0


def test_knn_all_points_gives_global_mean():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (9, 16))
    y = rng.normal(size=9)
    pred = baselines.knn_fit_predict(X, y, rng.integers(0, 2, (4, 16)), k=9)
    assert np.allclose(pred, y.mean(), rtol=0, atol=1e-15)


def test_knn_k_validation():
    with pytest.raises(KTooLarge):
        baselines.KnnModel(np.zeros((3, 4)), np.zeros(3), k=4)
    with pytest.raises(KTooLarge):
        baselines.KnnModel(np.zeros((3, 4)), np.zeros(3), k=0)
    with pytest.raises(EmptyTrainingSet):
        baselines.KnnModel(np.zeros((0, 4)), np.zeros(0), k=1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["hamming", "tanimoto"]), st.integers(1, 7))
def test_knn_equals_exhaustive_search(seed, metric, k):
    rng = np.random.default_rng(seed)
    X = (rng.random((200, 24)) < 0.3).astype(np.uint8)
    y = rng.normal(size=200)
    Q = (rng.random((20, 24)) < 0.3).astype(np.uint8)
    ids = [f"m{int(v):04d}" for v in rng.permutation(200)]
    model = baselines.KnnModel(X, y, k, metric, ids)
    got = model.neighbors(Q)
    for i, q in enumerate(Q.tolist()):
        expected = reference_neighbors(X.tolist(), q, k, metric, ids)
        assert got[i].tolist() == expected
        assert model.predict(Q[i : i + 1])[0] == y[expected].mean()


def test_fss_is_nearest_tanimoto():
    X = np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 0, 1, 1]], dtype=np.uint8)
    assert baselines.fss_fit_predict(X, [1.0, 2.0, 3.0], np.array([[1, 1, 1, 1]]))[0] == 2.0


# --- feed-forward regressors ------------------------------------------------


SMALL = baselines.NnConfig(hidden=(16, 16), epochs=100, lr=1e-2, pretrain_epochs=60, finetune_epochs=40)


def test_nn_constant_labels():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (30, 16))
    pred = baselines.nn_fit_predict(X, np.full(30, -7.0), rng.integers(0, 2, (10, 16)), SMALL, rng)
    assert np.all(np.abs(pred + 7.0) < 0.1)


def test_nn_zero_epochs_deterministic_and_duplicate_rows():
    rng = np.random.default_rng(1)
    X, y = rng.integers(0, 2, (20, 8)), rng.normal(size=20)
    Q = np.vstack([X[:3], X[:3]])
    cfg = baselines.NnConfig(hidden=(8,), epochs=0)
    a = baselines.nn_fit_predict(X, y, Q, cfg, np.random.default_rng(5))
    b = baselines.nn_fit_predict(X, y, Q, cfg, np.random.default_rng(5))
    assert np.array_equal(a, b)
    trained = baselines.nn_fit_predict(X, y, Q, SMALL, np.random.default_rng(5))
    assert np.array_equal(trained[:3], trained[3:])


def test_nn_fits_training_data():
    rng = np.random.default_rng(2)
    X = rng.integers(0, 2, (60, 12)).astype(float)
    y = X @ rng.normal(size=12)
    pred = baselines.nn_fit_predict(X, y, X, baselines.NnConfig(hidden=(32,), epochs=400, lr=1e-2), rng)
    assert np.mean((pred - y) ** 2) < 0.05 * np.var(y)


def small_split_table():
    table = data.synthetic_task_family(0, 6, 80, 16, 0.2)
    split = data.SplitSpec(table.molecule_ids[:40], table.molecule_ids[40:], ["f0", "f1", "f2", "f3"], ["f4", "f5"])
    return table, split


def test_masked_function_equals_training_without_it():
    table, split = small_split_table()
    masked = table.copy()
    masked.scores[:, masked.function_index("f3")] = np.nan
    without = data.SplitSpec(split.dtrain, split.dtest, ["f0", "f1", "f2"], split.ftest)
    a = baselines.pretrain_finetune(masked, split, "f4", SMALL, np.random.default_rng(0))
    b = baselines.pretrain_finetune(table, without, "f4", SMALL, np.random.default_rng(0))
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_pretrain_finetune_shapes_and_errors():
    table, split = small_split_table()
    pred = baselines.pretrain_finetune(table, split, "f5", SMALL, np.random.default_rng(0), split.dtrain[:10])
    assert pred.shape == (40,) and np.all(np.isfinite(pred))
    with pytest.raises(UnknownFunction):
        baselines.pretrain_finetune(table, split, "f0", SMALL)
    with pytest.raises(UnknownFunction):
        baselines.pretrain_finetune(table, split, "zzz", SMALL)


def test_predictions_csv_round_trip(tmp_path):
    rows = [
        {"function_id": "F2", "molecule_id": "m1", "model": "cnp", "n_train_or_context": 5, "prediction": -8.25, "variance": 0.5},
        {"function_id": "F2", "molecule_id": "m2", "model": "rf", "n_train_or_context": 5, "prediction": 1 / 3, "variance": None},
    ]
    path = tmp_path / "p.csv"
    baselines.write_predictions_csv(path, rows)
    assert path.read_text().splitlines()[0] == ",".join(baselines.PREDICTION_COLUMNS)
    assert baselines.read_predictions_csv(path) == rows
