"""Stochastic gradient-boosted regression trees with squared-error loss.

Base learners are greedy variance-reduction binary trees: numeric splits
at midpoints between sorted distinct values, categorical splits one level
vs. the rest with candidate levels walked in mean-target order. Boosting
subsamples rows without replacement each iteration (the bag fraction),
fits a tree to the current residuals, and adds it scaled by the learning
rate. Tuning runs k-fold cross-validation over a parameter grid, tracking
the RMSE-per-iteration curve and extending the tree budget whenever the
curve's argmin lands within a proximity window of the current maximum.

Everything is a pure function of (data, params, seed): per-iteration bag
draws, fold assignments and per-location work all derive their generators
from the caller's seed, so parallel and serial runs agree bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datamodel import Dataset, LocationId, Schema, SchemaError
from .seeds import derive_rng, derive_seed

MAX_TREES_CEILING = 10_000
_GAIN_EPS = 1e-7

LOCATION_FEATURES = ("loc_log_population", "loc_unemployment")


# --- encoding -------------------------------------------------------------


@dataclass(frozen=True)
class TableEncoder:
    """Maps schema-valid covariate rows to the float matrix trees consume.

    Categorical columns hold integer level codes (as floats); the level
    code tables come from the closed schema, so any token outside the
    schema routes to the "missing" code before it ever reaches a tree.
    Location-level predictors are appended as two extra numeric columns
    so they can be substituted per candidate location at prediction time.
    """

    feature_names: tuple
    is_cat: np.ndarray
    n_levels: np.ndarray
    level_maps: tuple
    schema_fingerprint: str

    @classmethod
    def from_schema(cls, schema: Schema) -> "TableEncoder":
        names, is_cat, n_levels, level_maps = [], [], [], []
        for spec in schema.features:
            names.append(spec.name)
            if spec.kind == "categorical":
                if len(spec.levels) > 64:
                    raise SchemaError(f"feature {spec.name!r}: >64 levels unsupported")
                is_cat.append(True)
                n_levels.append(len(spec.levels))
                level_maps.append({lv: i for i, lv in enumerate(spec.levels)})
            else:
                is_cat.append(False)
                n_levels.append(0)
                level_maps.append(None)
        for name in LOCATION_FEATURES:
            names.append(name)
            is_cat.append(False)
            n_levels.append(0)
            level_maps.append(None)
        return cls(
            feature_names=tuple(names),
            is_cat=np.array(is_cat, dtype=bool),
            n_levels=np.array(n_levels, dtype=np.int64),
            level_maps=tuple(level_maps),
            schema_fingerprint=schema.fingerprint(),
        )

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _encode_value(self, j: int, value) -> float:
        lm = self.level_maps[j]
        if lm is None:
            v = float(value)
            if not math.isfinite(v):
                raise SchemaError(f"feature {self.feature_names[j]!r}: non-finite value")
            return v
        code = lm.get(value)
        if code is None:
            code = lm["missing"]  # unseen level -> missing branch
        return float(code)

    def encode_profile(self, covariates: dict, location: LocationId) -> np.ndarray:
        row = np.empty(self.n_features)
        for j, name in enumerate(self.feature_names):
            if name in LOCATION_FEATURES:
                continue
            if name not in covariates:
                raise SchemaError(f"missing feature {name!r}")
            row[j] = self._encode_value(j, covariates[name])
        return self.substitute_location(row[None, :], location)[0]

    def encode_records(self, dataset: Dataset) -> np.ndarray:
        """Encode with each record's own landing-location attributes."""
        n = len(dataset)
        X = np.empty((n, self.n_features))
        loc_by_id = {loc.id: loc for loc in dataset.locations}
        for j, name in enumerate(self.feature_names):
            if name in LOCATION_FEATURES:
                continue
            col = dataset.column(name)
            if self.level_maps[j] is None:
                X[:, j] = col
            else:
                lm = self.level_maps[j]
                miss = lm["missing"]
                X[:, j] = [lm.get(v, miss) for v in col]
        pops = np.array([math.log(loc_by_id[r.landing].population) for r in dataset.records])
        unemp = np.array([loc_by_id[r.landing].unemployment_rate for r in dataset.records])
        X[:, self.feature_names.index("loc_log_population")] = pops
        X[:, self.feature_names.index("loc_unemployment")] = unemp
        return X

    def substitute_location(self, X: np.ndarray, location: LocationId) -> np.ndarray:
        X = X.copy()
        X[:, self.feature_names.index("loc_log_population")] = math.log(location.population)
        X[:, self.feature_names.index("loc_unemployment")] = location.unemployment_rate
        return X

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "is_cat": self.is_cat.astype(int).tolist(),
            "n_levels": self.n_levels.tolist(),
            "level_maps": [lm if lm is None else lm for lm in self.level_maps],
            "schema_fingerprint": self.schema_fingerprint,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TableEncoder":
        return cls(
            feature_names=tuple(obj["feature_names"]),
            is_cat=np.array(obj["is_cat"], dtype=bool),
            n_levels=np.array(obj["n_levels"], dtype=np.int64),
            level_maps=tuple(obj["level_maps"]),
            schema_fingerprint=obj["schema_fingerprint"],
        )


# --- trees ------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionTree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray      # uint64 bitmask of level codes routed left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    depth_limit: int

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def predict(self, X: np.ndarray, is_cat: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            idx = node[internal]
            feat = self.feature[idx]
            vals = X[internal, feat]
            cat = is_cat[feat]
            go_left = np.empty(idx.shape, dtype=bool)
            if cat.any():
                codes = vals[cat].astype(np.uint64)
                go_left[cat] = (self.cat_mask[idx[cat]] >> codes) & np.uint64(1) == 1
            if (~cat).any():
                go_left[~cat] = vals[~cat] <= self.threshold[idx[~cat]]
            node[internal] = np.where(go_left, self.left[idx], self.right[idx])
        return self.value[node]


class _NodeSplit:
    __slots__ = ("gain", "col", "threshold", "mask", "go_left")

    def __init__(self, gain, col, threshold, mask, go_left):
        self.gain = gain
        self.col = col
        self.threshold = threshold
        self.mask = mask
        self.go_left = go_left


def _eval_node(X, t, is_cat, n_levels, min_node):
    """Best variance-reduction split over all features, or None.

    Targets are centered before gain evaluation (gains are shift
    invariant) to keep the running sums small. Within a feature the
    first-best boundary wins; across features the lowest column index
    wins, so the search is fully deterministic.
    """
    m = t.size
    if m < 2 * min_node:
        return None
    tc = t - t.mean()
    S = tc.sum()
    base = S * S / m
    p = X.shape[1]
    col_gain = np.full(p, -np.inf)
    col_info = [None] * p

    num_cols = np.flatnonzero(~is_cat)
    if num_cols.size and m >= 2 * min_node:
        Xn = X[:, num_cols]
        order = np.argsort(Xn, axis=0, kind="stable")
        sv = np.take_along_axis(Xn, order, axis=0)
        st = tc[order]
        csum = np.cumsum(st, axis=0)
        mL = np.arange(1, m, dtype=np.float64)[:, None]
        SL = csum[:-1]
        gains = SL * SL / mL + (S - SL) ** 2 / (m - mL) - base
        valid = (sv[:-1] < sv[1:]) & (mL >= min_node) & ((m - mL) >= min_node)
        gains[~valid] = -np.inf
        if gains.size:
            best_pos = np.argmax(gains, axis=0)
            best_g = gains[best_pos, np.arange(num_cols.size)]
            for jj, col in enumerate(num_cols):
                if best_g[jj] > -np.inf:
                    pos = best_pos[jj]
                    col_gain[col] = best_g[jj]
                    col_info[col] = 0.5 * (sv[pos, jj] + sv[pos + 1, jj])

    for col in np.flatnonzero(is_cat):
        codes = X[:, col].astype(np.int64)
        L = int(n_levels[col])
        cnts = np.bincount(codes, minlength=L)
        sums = np.bincount(codes, weights=tc, minlength=L)
        ok = (cnts >= min_node) & ((m - cnts) >= min_node)
        if not ok.any():
            continue
        gains = np.full(L, -np.inf)
        gains[ok] = sums[ok] ** 2 / cnts[ok] + (S - sums[ok]) ** 2 / (m - cnts[ok]) - base
        means = np.where(cnts > 0, sums / np.maximum(cnts, 1), np.inf)
        by_mean = np.argsort(means, kind="stable")
        pick = by_mean[np.argmax(gains[by_mean])]
        if gains[pick] > -np.inf:
            col_gain[col] = gains[pick]
            col_info[col] = np.uint64(1) << np.uint64(pick)

    best_col = int(np.argmax(col_gain))
    if not np.isfinite(col_gain[best_col]) or col_gain[best_col] <= _GAIN_EPS:
        return None
    if is_cat[best_col]:
        mask = col_info[best_col]
        go_left = (mask >> X[:, best_col].astype(np.uint64)) & np.uint64(1) == 1
        return _NodeSplit(float(col_gain[best_col]), best_col, 0.0, mask, go_left)
    thr = col_info[best_col]
    return _NodeSplit(float(col_gain[best_col]), best_col, float(thr), np.uint64(0), X[:, best_col] <= thr)


def fit_tree(X, targets, is_cat, n_levels, depth_limit, min_node=10,
             depth_mode="depth") -> RegressionTree:
    """Greedy variance-reduction regression tree.

    depth_mode "depth" caps tree depth at depth_limit; "max-splits" grows
    best-first with depth_limit as the total split budget. Constant
    targets yield a single-leaf tree.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != targets.size:
        raise ValueError("rows and targets length mismatch")
    if depth_mode not in ("depth", "max-splits"):
        raise ValueError(f"unknown depth_mode {depth_mode!r}")

    feature, threshold, cat_mask = [], [], []
    left, right, value, gain = [], [], [], []

    def _new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        cat_mask.append(np.uint64(0))
        left.append(-1)
        right.append(-1)
        value.append(float(targets[rows].mean()))
        gain.append(0.0)
        return len(feature) - 1

    all_rows = np.arange(X.shape[0])
    root = _new_node(all_rows)

    if depth_mode == "depth":
        stack = [(all_rows, 0, root)]
        while stack:
            rows, depth, slot = stack.pop()
            if depth >= depth_limit:
                continue
            split = _eval_node(X[rows], targets[rows], is_cat, n_levels, min_node)
            if split is None:
                continue
            l_rows = rows[split.go_left]
            r_rows = rows[~split.go_left]
            feature[slot] = split.col
            threshold[slot] = split.threshold
            cat_mask[slot] = split.mask
            gain[slot] = split.gain
            left[slot] = _new_node(l_rows)
            right[slot] = _new_node(r_rows)
            stack.append((l_rows, depth + 1, left[slot]))
            stack.append((r_rows, depth + 1, right[slot]))
    else:
        import heapq

        counter = 0
        heap = []

        def _push(rows, slot):
            nonlocal counter
            split = _eval_node(X[rows], targets[rows], is_cat, n_levels, min_node)
            if split is not None:
                heapq.heappush(heap, (-split.gain, counter, rows, slot, split))
                counter += 1

        _push(all_rows, root)
        splits_used = 0
        while heap and splits_used < depth_limit:
            _, _, rows, slot, split = heapq.heappop(heap)
            l_rows = rows[split.go_left]
            r_rows = rows[~split.go_left]
            feature[slot] = split.col
            threshold[slot] = split.threshold
            cat_mask[slot] = split.mask
            gain[slot] = split.gain
            left[slot] = _new_node(l_rows)
            right[slot] = _new_node(r_rows)
            splits_used += 1
            _push(l_rows, left[slot])
            _push(r_rows, right[slot])

    return RegressionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        cat_mask=np.array(cat_mask, dtype=np.uint64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
        depth_limit=depth_limit,
    )


# --- boosting ---------------------------------------------------------------


@dataclass(frozen=True)
class BoostParams:
    depth: int
    rate: float
    bag_fraction: float
    n_trees: int
    min_node: int = 10
    depth_mode: str = "depth"

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("learning rate must be in (0, 1]")
        if not 0.0 < self.bag_fraction <= 1.0:
            raise ValueError("bag fraction must be in (0, 1]")
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")


@dataclass(frozen=True)
class BoostedModel:
    """One fitted per-location earnings model."""

    init_value: float
    trees: tuple
    learning_rate: float
    location: LocationId | None
    encoder: TableEncoder
    params: BoostParams
    train_rmse_trace: np.ndarray = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_encoded(self, X: np.ndarray, clamp: bool = True) -> np.ndarray:
        pred = np.full(X.shape[0], self.init_value)
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X, self.encoder.is_cat)
        return np.clip(pred, 0.0, None) if clamp else pred


def predict(model: BoostedModel, covariates: dict, location: LocationId | None = None) -> float:
    """Predicted annual income for one profile, clamped below at 0."""
    loc = location if location is not None else model.location
    if loc is None:
        raise ValueError("no location attributes available for prediction")
    row = model.encoder.encode_profile(covariates, loc)
    return float(model.predict_encoded(row[None, :])[0])


def _boost_state(X, y, params: BoostParams, encoder: TableEncoder, seed: int):
    """Iterator over (tree, train_rmse) fitting residuals stagewise."""
    n = X.shape[0]
    init = float(y.mean())
    pred = np.full(n, init)
    bag_m = max(2, math.ceil(params.bag_fraction * n))
    is_cat, n_levels = encoder.is_cat, encoder.n_levels
    for t in range(params.n_trees):
        resid = y - pred
        if params.bag_fraction >= 1.0:
            idx = np.arange(n)
        else:
            idx = derive_rng(seed, "bag", t).permutation(n)[:bag_m]
        tree = fit_tree(
            X[idx], resid[idx], is_cat, n_levels,
            params.depth, params.min_node, params.depth_mode,
        )
        pred += params.rate * tree.predict(X, is_cat)
        rmse = math.sqrt(float(np.mean((y - pred) ** 2)))
        yield tree, rmse


def fit_boosted(X, y, params: BoostParams, encoder: TableEncoder, seed: int = 0,
                location: LocationId | None = None) -> BoostedModel:
    """Fit a stochastic gradient-boosted ensemble; pure in (data, params, seed)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.size:
        raise ValueError("rows and targets length mismatch")
    trees, trace = [], []
    for tree, rmse in _boost_state(X, y, params, encoder, seed):
        trees.append(tree)
        trace.append(rmse)
    return BoostedModel(
        init_value=float(y.mean()),
        trees=tuple(trees),
        learning_rate=params.rate,
        location=location,
        encoder=encoder,
        params=params,
        train_rmse_trace=np.array(trace),
    )


def fold_assignments(n: int, folds: int, seed: int) -> list:
    """Seeded shuffle split into `folds` near-equal parts."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"cannot make {folds} folds from {n} rows")
    perm = derive_rng(seed, "folds").permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(X, y, params: BoostParams, encoder: TableEncoder, folds: int,
                   seed: int = 0, capture_at: int | None = None):
    """Fold-averaged held-out RMSE for boosting iterations 1..n_trees.

    When capture_at is given, also returns the held-out predictions at
    that iteration count, aligned to input row order (for pooled R²).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    parts = fold_assignments(X.shape[0], folds, seed)
    curves = np.zeros((len(parts), params.n_trees))
    captured = np.empty(X.shape[0]) if capture_at is not None else None
    for f, val_idx in enumerate(parts):
        train_mask = np.ones(X.shape[0], dtype=bool)
        train_mask[val_idx] = False
        Xtr, ytr = X[train_mask], y[train_mask]
        Xval, yval = X[val_idx], y[val_idx]
        val_pred = np.full(val_idx.size, float(ytr.mean()))
        if capture_at == 0 and captured is not None:
            captured[val_idx] = val_pred
        for t, (tree, _) in enumerate(
            _boost_state(Xtr, ytr, params, encoder, derive_seed(seed, "cv", f)), start=1
        ):
            val_pred += params.rate * tree.predict(Xval, encoder.is_cat)
            curves[f, t - 1] = math.sqrt(float(np.mean((yval - val_pred) ** 2)))
            if capture_at == t and captured is not None:
                captured[val_idx] = val_pred
    curve = curves.mean(axis=0)
    if capture_at is not None:
        return curve, captured
    return curve


# --- tuning -----------------------------------------------------------------


@dataclass(frozen=True)
class TuningGrid:
    interaction_depths: tuple
    learning_rates: tuple
    bag_fractions: tuple
    initial_max_trees: int
    extension_step: int
    proximity_threshold: int

    def __post_init__(self):
        if not (self.interaction_depths and self.learning_rates and self.bag_fractions):
            raise ValueError("grid sets must be non-empty")
        if any(not 0.0 < b <= 1.0 for b in self.bag_fractions):
            raise ValueError("bag fractions must be in (0, 1]")

    def cells(self) -> list:
        return [
            (d, r, b)
            for d in sorted(self.interaction_depths)
            for r in sorted(self.learning_rates)
            for b in sorted(self.bag_fractions)
        ]

    @classmethod
    def paper(cls) -> "TuningGrid":
        """Full production grid: depths 5-7, rates .1/.01, bags .5-.8 by .15."""
        return cls((5, 6, 7), (0.1, 0.01), (0.5, 0.65, 0.8), 1000, 500, 100)

    @classmethod
    def desk(cls) -> "TuningGrid":
        """Reduced grid for desk-scale runs."""
        return cls((3, 5), (0.15,), (0.8,), 200, 100, 20)


@dataclass(frozen=True)
class TuneResult:
    params: BoostParams
    cv_rmse: float
    report: tuple  # per-cell dicts: depth, rate, bag, best_trees, cv_rmse, max_trees


def tune(X, y, grid: TuningGrid, encoder: TableEncoder, folds: int = 10,
         seed: int = 0, min_node: int = 10, depth_mode: str = "depth") -> TuneResult:
    """Grid search with the iterative tree-budget extension rule.

    Per cell: evaluate the CV curve up to the current max; while the
    argmin sits within proximity_threshold of that max, extend the budget
    by extension_step (capped at MAX_TREES_CEILING) and re-evaluate.
    Ties across cells break toward fewer trees, then lower depth, then
    lower rate.
    """
    report = []
    best = None  # (rmse, trees, depth, rate, bag)
    for depth, rate, bag in grid.cells():
        cur_max = grid.initial_max_trees
        cell_seed = derive_seed(seed, "cell", depth, rate, bag)
        while True:
            params = BoostParams(depth, rate, bag, cur_max, min_node, depth_mode)
            curve = cross_validate(X, y, params, encoder, folds, cell_seed)
            best_iter = int(np.argmin(curve)) + 1
            if cur_max - best_iter <= grid.proximity_threshold and cur_max < MAX_TREES_CEILING:
                cur_max = min(cur_max + grid.extension_step, MAX_TREES_CEILING)
                continue
            break
        rmse = float(curve[best_iter - 1])
        report.append(
            {"depth": depth, "rate": rate, "bag": bag,
             "best_trees": best_iter, "cv_rmse": rmse, "max_trees": cur_max}
        )
        key = (rmse, best_iter, depth, rate, bag)
        if best is None or key < best:
            best = key
    rmse, trees, depth, rate, bag = best
    return TuneResult(
        params=BoostParams(depth, rate, bag, trees, min_node, depth_mode),
        cv_rmse=rmse,
        report=tuple(report),
    )


# --- per-location model sets -------------------------------------------------


@dataclass(frozen=True)
class ModelSet:
    """One fitted model per location with enough training rows."""

    models: dict
    metadata: dict
    unmodeled: tuple
    schema_fingerprint: str
    seed: int

    @property
    def location_ids(self) -> tuple:
        return tuple(sorted(self.models))

    def __getitem__(self, loc_id: int) -> BoostedModel:
        return self.models[loc_id]


def cap_outcomes(y: np.ndarray, cap_quantile: float | None) -> np.ndarray:
    """Winsorize training outcomes at the given upper quantile (and at 0)."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, None)
    if cap_quantile is not None:
        y = np.minimum(y, np.quantile(y, cap_quantile))
    return y


def _fit_one_location(args):
    (loc, X, y, grid, folds, tune_seed, fit_seed, min_node, depth_mode, encoder) = args
    result = tune(X, y, grid, encoder, folds, tune_seed, min_node, depth_mode)
    model = fit_boosted(X, y, result.params, encoder, fit_seed, loc)
    info = {
        "n_rows": int(y.size),
        "depth": result.params.depth,
        "rate": result.params.rate,
        "bag": result.params.bag_fraction,
        "n_trees": result.params.n_trees,
        "cv_rmse": result.cv_rmse,
        "depth_mode": depth_mode,
    }
    return loc.id, model, info


def fit_location_models(train: Dataset, grid: TuningGrid, min_rows: int = 50,
                        seed: int = 0, folds: int = 10, cap_quantile: float = 0.99,
                        min_node: int = 10, depth_mode: str = "depth",
                        n_jobs: int = 1) -> ModelSet:
    """Tune and fit one boosted model per location with >= min_rows rows.

    Locations below the threshold are flagged unmodeled. Per-location
    seeds derive from the root seed, so n_jobs only changes wall time.
    """
    encoder = TableEncoder.from_schema(train.schema)
    X_all = encoder.encode_records(train)
    y_all = cap_outcomes(train.outcomes(), cap_quantile)
    landings = train.landings()

    jobs, unmodeled = [], []
    for loc in train.locations:
        idx = np.flatnonzero(landings == loc.id)
        if idx.size < min_rows:
            unmodeled.append(loc.id)
            continue
        jobs.append(
            (loc, X_all[idx], y_all[idx], grid, folds,
             derive_seed(seed, "tune", loc.id), derive_seed(seed, "fit", loc.id),
             min_node, depth_mode, encoder)
        )
    if not jobs:
        raise ValueError("no location meets the min_rows threshold")

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_one_location, jobs))
    else:
        results = [_fit_one_location(job) for job in jobs]

    models = {loc_id: model for loc_id, model, _ in results}
    metadata = {loc_id: info for loc_id, _, info in results}
    return ModelSet(
        models=models,
        metadata=metadata,
        unmodeled=tuple(unmodeled),
        schema_fingerprint=encoder.schema_fingerprint,
        seed=seed,
    )


def variable_importance(model: BoostedModel) -> dict:
    """Relative influence: share of total split gain per feature, in percent."""
    totals = np.zeros(model.encoder.n_features)
    for tree in model.trees:
        split = tree.feature >= 0
        np.add.at(totals, tree.feature[split], tree.gain[split])
    total = totals.sum()
    if total <= 0:
        return {}
    return {
        name: float(100.0 * totals[j] / total)
        for j, name in enumerate(model.encoder.feature_names)
        if totals[j] > 0
    }


# --- linear baseline ----------------------------------------------------------


def onehot_design(X: np.ndarray, encoder: TableEncoder) -> np.ndarray:
    """Intercept + numerics + full one-hot dummies for categoricals."""
    cols = [np.ones((X.shape[0], 1))]
    for j in range(encoder.n_features):
        if encoder.is_cat[j]:
            codes = X[:, j].astype(np.int64)
            dummies = np.zeros((X.shape[0], int(encoder.n_levels[j])))
            dummies[np.arange(X.shape[0]), codes] = 1.0
            cols.append(dummies)
        else:
            cols.append(X[:, j : j + 1])
    return np.hstack(cols)


def cv_linear_predictions(X, y, encoder: TableEncoder, folds: int, seed: int) -> np.ndarray:
    """Held-out OLS predictions using the same fold scheme as cross_validate."""
    Z = onehot_design(np.asarray(X, dtype=np.float64), encoder)
    y = np.asarray(y, dtype=np.float64)
    out = np.empty(y.size)
    for val_idx in fold_assignments(y.size, folds, seed):
        train_mask = np.ones(y.size, dtype=bool)
        train_mask[val_idx] = False
        coef, *_ = np.linalg.lstsq(Z[train_mask], y[train_mask], rcond=None)
        out[val_idx] = Z[val_idx] @ coef
    return out


def modelset_cv_r2(train: Dataset, grid: TuningGrid, min_rows: int = 50,
                   folds: int = 10, seed: int = 0, cap_quantile: float = 0.99,
                   min_node: int = 10) -> dict:
    """Pooled 10-fold CV R² of the tuned per-location set vs. per-location OLS.

    Held-out squared errors are pooled across locations; both model
    families share fold assignments and the grand-mean total sum of
    squares, so the comparison isolates within-fit quality.
    """
    encoder = TableEncoder.from_schema(train.schema)
    X_all = encoder.encode_records(train)
    y_all = cap_outcomes(train.outcomes(), cap_quantile)
    landings = train.landings()

    boost_pred, linear_pred, truth = [], [], []
    details = {}
    for loc in train.locations:
        idx = np.flatnonzero(landings == loc.id)
        if idx.size < min_rows:
            continue
        X, y = X_all[idx], y_all[idx]
        cell_seed = derive_seed(seed, "tune", loc.id)
        result = tune(X, y, grid, encoder, folds, cell_seed, min_node)
        _, captured = cross_validate(
            X, y, result.params, encoder, folds, cell_seed, capture_at=result.params.n_trees
        )
        lin = cv_linear_predictions(X, y, encoder, folds, cell_seed)
        boost_pred.append(captured)
        linear_pred.append(lin)
        truth.append(y)
        details[loc.id] = {"n": int(y.size), "params": result.params, "cv_rmse": result.cv_rmse}
    if not truth:
        raise ValueError("no location meets the min_rows threshold")

    y = np.concatenate(truth)
    tss = float(((y - y.mean()) ** 2).sum())
    sse_b = float(((y - np.concatenate(boost_pred)) ** 2).sum())
    sse_l = float(((y - np.concatenate(linear_pred)) ** 2).sum())
    return {
        "r2_boosted": 1.0 - sse_b / tss,
        "r2_linear": 1.0 - sse_l / tss,
        "locations": details,
    }


# --- persistence ---------------------------------------------------------------


def _tree_to_json(tree: RegressionTree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "cat_mask": [int(v) for v in tree.cat_mask.tolist()],
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "gain": tree.gain.tolist(),
        "depth_limit": tree.depth_limit,
    }


def _tree_from_json(obj: dict) -> RegressionTree:
    return RegressionTree(
        feature=np.array(obj["feature"], dtype=np.int32),
        threshold=np.array(obj["threshold"], dtype=np.float64),
        cat_mask=np.array(obj["cat_mask"], dtype=np.uint64),
        left=np.array(obj["left"], dtype=np.int32),
        right=np.array(obj["right"], dtype=np.int32),
        value=np.array(obj["value"], dtype=np.float64),
        gain=np.array(obj["gain"], dtype=np.float64),
        depth_limit=obj["depth_limit"],
    )


def model_to_json(model: BoostedModel) -> dict:
    loc = model.location
    return {
        "init_value": model.init_value,
        "learning_rate": model.learning_rate,
        "n_trees": model.n_trees,
        "params": {
            "depth": model.params.depth,
            "rate": model.params.rate,
            "bag_fraction": model.params.bag_fraction,
            "n_trees": model.params.n_trees,
            "min_node": model.params.min_node,
            "depth_mode": model.params.depth_mode,
        },
        "location": None if loc is None else {
            "id": loc.id, "name": loc.name, "population": loc.population,
            "unemployment_rate": loc.unemployment_rate, "annual_rent": loc.annual_rent,
            "growth_rate": loc.growth_rate,
        },
        "encoder": model.encoder.to_json(),
        "trees": [_tree_to_json(t) for t in model.trees],
    }


def model_from_json(obj: dict) -> BoostedModel:
    loc = obj["location"]
    params = BoostParams(**obj["params"])
    return BoostedModel(
        init_value=obj["init_value"],
        trees=tuple(_tree_from_json(t) for t in obj["trees"]),
        learning_rate=obj["learning_rate"],
        location=None if loc is None else LocationId(**loc),
        encoder=TableEncoder.from_json(obj["encoder"]),
        params=params,
        train_rmse_trace=None,
    )


def save_modelset(modelset: ModelSet, dirpath) -> str:
    """Write per-location model files plus a manifest; returns content hash."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    files = {}
    for loc_id in sorted(modelset.models):
        fname = f"loc_{loc_id:03d}.model.json"
        blob = json.dumps(model_to_json(modelset.models[loc_id]), sort_keys=True)
        (dirpath / fname).write_text(blob, encoding="utf-8")
        files[str(loc_id)] = {
            "file": fname,
            "sha256": hashlib.sha256(blob.encode()).hexdigest(),
        }
    manifest = {
        "schema_fingerprint": modelset.schema_fingerprint,
        "seed": modelset.seed,
        "unmodeled": list(modelset.unmodeled),
        "metadata": {str(k): v for k, v in modelset.metadata.items()},
        "files": files,
    }
    (dirpath / "modelset.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return modelset_hash(dirpath)


def modelset_hash(dirpath) -> str:
    """Content hash over every model file; changes if any model changes."""
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "modelset.json").read_text(encoding="utf-8"))
    h = hashlib.sha256()
    for loc_id in sorted(manifest["files"], key=int):
        blob = (dirpath / manifest["files"][loc_id]["file"]).read_bytes()
        h.update(loc_id.encode())
        h.update(hashlib.sha256(blob).digest())
    return h.hexdigest()[:16]


def load_modelset(dirpath) -> ModelSet:
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "modelset.json").read_text(encoding="utf-8"))
    models, metadata = {}, {}
    for loc_id, entry in manifest["files"].items():
        blob = (dirpath / entry["file"]).read_text(encoding="utf-8")
        models[int(loc_id)] = model_from_json(json.loads(blob))
        metadata[int(loc_id)] = manifest["metadata"][loc_id]
    return ModelSet(
        models=models,
        metadata=metadata,
        unmodeled=tuple(manifest["unmodeled"]),
        schema_fingerprint=manifest["schema_fingerprint"],
        seed=manifest["seed"],
    )
