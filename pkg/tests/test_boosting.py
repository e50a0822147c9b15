import itertools

import numpy as np
import pytest

from geomatch.boosting import (
    MAX_TREES_CEILING,
    BoostParams,
    BoostedModel,
    TableEncoder,
    TuningGrid,
    cross_validate,
    fit_boosted,
    fit_location_models,
    fit_tree,
    fold_assignments,
    load_modelset,
    model_from_json,
    model_to_json,
    modelset_hash,
    predict,
    save_modelset,
    tune,
    variable_importance,
)
from geomatch.datamodel import SchemaError


def _enc(is_cat, n_levels, names=None):
    """Bare-bones encoder for raw-matrix tests."""
    p = len(is_cat)
    return TableEncoder(
        feature_names=tuple(names or [f"f{i}" for i in range(p)]),
        is_cat=np.array(is_cat, dtype=bool),
        n_levels=np.array(n_levels, dtype=np.int64),
        level_maps=tuple(
            {chr(97 + i): i for i in range(n)} | {"missing": n - 1} if c else None
            for c, n in zip(is_cat, n_levels)
        ),
        schema_fingerprint="raw-test",
    )


NUM1 = (np.array([False]), np.array([0]))


def brute_force_best_split(X, t, is_cat, n_levels, min_node):
    """Independent search over every candidate split; returns max SSE drop."""
    m = t.size
    sse = lambda v: float(((v - v.mean()) ** 2).sum()) if v.size else 0.0
    parent = sse(t)
    best = 0.0
    for j in range(X.shape[1]):
        if is_cat[j]:
            for lv in range(int(n_levels[j])):
                left = X[:, j] == lv
                nl = int(left.sum())
                if nl < min_node or m - nl < min_node:
                    continue
                best = max(best, parent - sse(t[left]) - sse(t[~left]))
        else:
            for thr in np.unique(X[:, j])[:-1]:
                left = X[:, j] <= thr
                nl = int(left.sum())
                if nl < min_node or m - nl < min_node:
                    continue
                best = max(best, parent - sse(t[left]) - sse(t[~left]))
    return best


def test_constant_targets_single_leaf():
    X = np.arange(24, dtype=float)[:, None]
    tree = fit_tree(X, np.full(24, 5.0), *NUM1, depth_limit=4, min_node=2)
    assert tree.n_splits == 0
    assert np.allclose(tree.predict(X, NUM1[0]), 5.0)


def test_perfect_binary_split():
    X = np.array([0.0] * 10 + [1.0] * 10)[:, None]
    t = np.array([0.0] * 10 + [10.0] * 10)
    tree = fit_tree(X, t, *NUM1, depth_limit=3, min_node=2)
    assert tree.n_splits == 1
    assert np.allclose(tree.predict(X, NUM1[0]), t)


def test_piecewise_constant_matches_brute_force():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 1, 20))
    t = np.where(x < x[11], 2.0, 9.0)  # plateau break between points 10 and 11
    X = x[:, None]
    tree = fit_tree(X, t, *NUM1, depth_limit=1, min_node=2)
    assert tree.n_splits == 1
    assert abs(tree.threshold[0] - 0.5 * (x[10] + x[11])) < 1e-15
    assert np.abs(tree.predict(X, NUM1[0]) - t).max() < 1e-12
    # chosen gain equals exhaustive search
    gain_oracle = brute_force_best_split(X, t, *NUM1, min_node=2)
    assert abs(tree.gain[0] - gain_oracle) < 1e-6 * max(1.0, gain_oracle)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_root_split_matches_brute_force_mixed_features(seed):
    rng = np.random.default_rng(seed)
    n = 80
    is_cat = np.array([False, True, False])
    n_levels = np.array([0, 4, 0])
    X = np.column_stack([
        rng.normal(size=n),
        rng.integers(0, 4, size=n).astype(float),
        rng.normal(size=n),
    ])
    t = 2.0 * X[:, 0] + np.where(X[:, 1] == 2, 5.0, 0.0) + rng.normal(0, 0.5, n)
    tree = fit_tree(X, t, is_cat, n_levels, depth_limit=1, min_node=5)
    gain_oracle = brute_force_best_split(X, t, is_cat, n_levels, min_node=5)
    assert tree.n_splits == 1
    assert abs(tree.gain[0] - gain_oracle) <= 1e-9 * max(1.0, gain_oracle)


def test_max_splits_mode_respects_budget():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 3))
    t = X[:, 0] + np.sign(X[:, 1]) + 0.1 * rng.normal(size=200)
    enc3 = (np.array([False] * 3), np.array([0, 0, 0]))
    tree = fit_tree(X, t, *enc3, depth_limit=5, min_node=5, depth_mode="max-splits")
    assert tree.n_splits == 5
    deep = fit_tree(X, t, *enc3, depth_limit=5, min_node=5, depth_mode="depth")
    assert deep.n_splits >= tree.n_splits


def test_boost_zero_trees_predicts_mean():
    enc = _enc([False], [0])
    X = np.arange(30, dtype=float)[:, None]
    y = np.linspace(0, 100, 30)
    m = fit_boosted(X, y, BoostParams(3, 0.1, 1.0, 0), enc, seed=0)
    assert np.allclose(m.predict_encoded(X), y.mean())


def test_training_rmse_non_increasing_at_full_bag():
    rng = np.random.default_rng(5)
    enc = _enc([False, False], [0, 0])
    X = rng.normal(size=(150, 2))
    y = 40.0 + 12.0 * X[:, 0] - 5.0 * X[:, 1] ** 2 + rng.normal(0, 1, 150)
    m = fit_boosted(X, y, BoostParams(3, 0.3, 1.0, 40), enc, seed=1)
    assert (np.diff(m.train_rmse_trace) <= 1e-9).all()


def test_boost_deterministic_given_seed():
    rng = np.random.default_rng(6)
    enc = _enc([False], [0])
    X = rng.normal(size=(100, 1))
    y = X[:, 0] ** 2 + rng.normal(0, 0.1, 100)
    a = fit_boosted(X, y, BoostParams(2, 0.2, 0.6, 25), enc, seed=9)
    b = fit_boosted(X, y, BoostParams(2, 0.2, 0.6, 25), enc, seed=9)
    assert np.array_equal(a.predict_encoded(X), b.predict_encoded(X))
    c = fit_boosted(X, y, BoostParams(2, 0.2, 0.6, 25), enc, seed=10)
    assert not np.array_equal(a.predict_encoded(X), c.predict_encoded(X))


def test_cv_constant_outcome_near_zero():
    enc = _enc([False], [0])
    X = np.arange(40, dtype=float)[:, None]
    curve = cross_validate(X, np.full(40, 7.0), BoostParams(2, 0.1, 1.0, 10), enc, 4, 0)
    assert curve.max() < 1e-9


def test_fold_partition_property():
    parts = fold_assignments(4, 2, seed=0)
    assert len(parts) == 2
    assert sorted(np.concatenate(parts).tolist()) == [0, 1, 2, 3]
    assert all(len(p) == 2 for p in parts)
    with pytest.raises(ValueError):
        fold_assignments(3, 4, seed=0)


def test_cv_curve_shows_overfitting():
    rng = np.random.default_rng(12)
    enc = _enc([False, False], [0, 0])
    X = rng.normal(size=(80, 2))
    y = 0.5 * X[:, 0] + rng.normal(0, 2.0, 80)  # mostly noise
    curve = cross_validate(X, y, BoostParams(7, 0.1, 1.0, 60), enc, 5, 3)
    argmin = int(np.argmin(curve))
    assert argmin < 59  # minimum strictly before the last iteration
    assert curve[-1] > curve[argmin]


def test_tune_single_cell_degenerate():
    rng = np.random.default_rng(2)
    enc = _enc([False], [0])
    X = rng.normal(size=(60, 1))
    y = 3 * X[:, 0] + rng.normal(0, 0.3, 60)
    grid = TuningGrid((2,), (0.3,), (1.0,), 30, 10, 2)
    result = tune(X, y, grid, enc, folds=4, seed=0)
    assert result.params.depth == 2 and result.params.rate == 0.3
    assert len(result.report) == 1
    assert result.params.n_trees == result.report[0]["best_trees"]


def test_extension_rule_fires_and_terminates():
    rng = np.random.default_rng(7)
    enc = _enc([False], [0])
    X = rng.normal(size=(200, 1))
    y = 5.0 * X[:, 0] + rng.normal(0, 0.2, 200)
    grid = TuningGrid((2,), (0.05,), (1.0,), 15, 15, 3)  # slow learner, tiny budget
    result = tune(X, y, grid, enc, folds=4, seed=0)
    cell = result.report[0]
    assert cell["max_trees"] > grid.initial_max_trees  # extension fired
    assert cell["max_trees"] < MAX_TREES_CEILING
    assert cell["best_trees"] <= cell["max_trees"] - grid.proximity_threshold


def test_paper_grid_enumerates_exactly_18_cells():
    grid = TuningGrid.paper()
    cells = grid.cells()
    assert len(cells) == 18
    assert sorted({d for d, _, _ in cells}) == [5, 6, 7]
    assert sorted({r for _, r, _ in cells}) == [0.01, 0.1]
    assert sorted({b for _, _, b in cells}) == [0.5, 0.65, 0.8]
    assert grid.initial_max_trees == 1000
    assert grid.extension_step == 500
    assert grid.proximity_threshold == 100


def test_location_models_counts_and_threshold(small_world, small_models):
    dataset, _ = small_world
    landings = dataset.landings()
    for loc in dataset.locations:
        n = int((landings == loc.id).sum())
        if n >= 40:
            assert loc.id in small_models.models
            assert small_models.metadata[loc.id]["n_rows"] == n
        else:
            assert loc.id in small_models.unmodeled


def test_location_models_zero_modelable_is_fatal(small_world, tiny_grid):
    dataset, _ = small_world
    with pytest.raises(ValueError, match="min_rows"):
        fit_location_models(dataset, tiny_grid, min_rows=10_000, seed=0, folds=4)


def test_parallel_and_serial_agree(small_world, tiny_grid, small_models):
    dataset, _ = small_world
    par = fit_location_models(dataset, tiny_grid, min_rows=40, seed=3, folds=4, n_jobs=2)
    enc = small_models.models[next(iter(small_models.models))].encoder
    X = enc.encode_records(dataset)
    for loc_id, model in small_models.models.items():
        assert np.array_equal(
            model.predict_encoded(X), par.models[loc_id].predict_encoded(X)
        )
        assert small_models.metadata[loc_id] == par.metadata[loc_id]


def test_predict_profile_paths(small_world, small_models):
    dataset, _ = small_world
    loc_id = next(iter(small_models.models))
    model = small_models.models[loc_id]
    rec = dataset.records[0]

    value = predict(model, rec.covariates)
    assert value >= 0.0

    # unseen categorical level routes to the missing branch
    odd = dict(rec.covariates, occupation="astronaut")
    as_missing = dict(rec.covariates, occupation="missing")
    assert predict(model, odd) == predict(model, as_missing)

    with pytest.raises(SchemaError, match="age"):
        predict(model, {k: v for k, v in rec.covariates.items() if k != "age"})


def test_predict_learned_binary_split():
    enc = _enc([False], [0])
    X = np.array([0.0] * 15 + [1.0] * 15)[:, None]
    y = np.array([0.0] * 15 + [10.0] * 15)
    m = fit_boosted(X, y, BoostParams(1, 1.0, 1.0, 1), enc, seed=0)
    out = m.predict_encoded(np.array([[0.0], [1.0]]))
    assert np.allclose(out, [0.0, 10.0], atol=1e-12)


def test_predict_clamped_below_zero():
    enc = _enc([False], [0])
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 12.0])
    m = fit_boosted(X, y, BoostParams(1, 1.0, 1.0, 1), enc, seed=0)
    # shift init value down so the low branch would go negative pre-clamp
    m = BoostedModel(
        init_value=m.init_value - 10.0, trees=m.trees, learning_rate=m.learning_rate,
        location=None, encoder=enc, params=m.params,
    )
    assert m.predict_encoded(np.array([[0.0]]), clamp=False)[0] < 0
    assert m.predict_encoded(np.array([[0.0]]))[0] == 0.0


def test_importance_single_feature_and_normalization():
    enc = _enc([False, False], [0, 0])
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.normal(size=120), np.zeros(120)])
    y = np.sin(X[:, 0] * 2) * 10
    m = fit_boosted(X, y, BoostParams(3, 0.3, 1.0, 20), enc, seed=0)
    imp = variable_importance(m)
    assert set(imp) == {"f0"}
    assert abs(imp["f0"] - 100.0) < 1e-9

    m0 = fit_boosted(X, y, BoostParams(3, 0.3, 1.0, 0), enc, seed=0)
    assert variable_importance(m0) == {}


def test_importance_noise_below_signals():
    rng = np.random.default_rng(8)
    n = 2500
    enc = _enc([False, True, False], [0, 4, 0], names=["signal_num", "signal_cat", "pure_noise"])
    X = np.column_stack([
        rng.normal(size=n),
        rng.integers(0, 4, size=n).astype(float),
        rng.normal(size=n),
    ])
    y = 8.0 * np.tanh(X[:, 0]) + np.array([0.0, 4.0, -3.0, 7.0])[X[:, 1].astype(int)]
    y = y + rng.normal(0, 1.0, n)
    m = fit_boosted(X, y, BoostParams(3, 0.2, 0.9, 60), enc, seed=0)
    imp = variable_importance(m)
    assert sum(imp.values()) == pytest.approx(100.0, abs=1e-9)
    noise = imp.get("pure_noise", 0.0)
    assert noise < imp["signal_num"]
    assert noise < imp["signal_cat"]


def test_model_json_round_trip(small_world, small_models):
    dataset, _ = small_world
    loc_id = next(iter(small_models.models))
    model = small_models.models[loc_id]
    back = model_from_json(model_to_json(model))
    enc = model.encoder
    X = enc.encode_records(dataset)
    assert np.array_equal(model.predict_encoded(X), back.predict_encoded(X))


def test_modelset_save_load_and_tamper_hash(tmp_path, small_world, small_models):
    dataset, _ = small_world
    h1 = save_modelset(small_models, tmp_path / "models")
    back = load_modelset(tmp_path / "models")
    assert set(back.models) == set(small_models.models)
    enc = small_models.models[next(iter(small_models.models))].encoder
    X = enc.encode_records(dataset)
    for loc_id, model in small_models.models.items():
        assert np.array_equal(model.predict_encoded(X), back.models[loc_id].predict_encoded(X))

    target = sorted((tmp_path / "models").glob("loc_*.model.json"))[0]
    blob = target.read_text().replace('"init_value": ', '"init_value": 1')
    target.write_text(blob)
    assert modelset_hash(tmp_path / "models") != h1
