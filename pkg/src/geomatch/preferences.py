"""Multinomial-logit preference proxy over landing locations.

Landing-location shares are modeled from a coarse covariate subset by an
L2-penalized multinomial logit (one reference location, intercepts
unpenalized), fitted with full-batch gradient ascent and Armijo
backtracking. Predicted landing probabilities stand in for unobserved
location preferences: sorting them descending (exact ties permuted
uniformly at random) gives each individual a preference rank order, and
the top-phi ranks form the acceptable set fed to the recommender.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset, Schema
from .seeds import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultinomialLogitModel:
    location_ids: tuple            # modeled locations (>=1 training landing)
    reference: int                 # reference location id (coef row implicit 0)
    feature_names: tuple
    coef: np.ndarray               # (K-1, 1+d): intercept + encoded features
    l2: float
    iterations: int
    grad_norm: float
    cat_levels: tuple              # per feature: level tuple or None
    num_stats: tuple               # per feature: (mean, sd) or None
    excluded: tuple = ()           # locations dropped for zero landings

    def design_row(self, covariates: dict) -> np.ndarray:
        return _design(
            [covariates], self.feature_names, self.cat_levels, self.num_stats
        )[0]

    def probabilities(self, covariates: dict) -> np.ndarray:
        """Softmax landing probabilities over modeled locations."""
        return self.probability_matrix(self.design_row(covariates)[None, :])[0]

    def probability_matrix(self, Z: np.ndarray) -> np.ndarray:
        scores = np.zeros((Z.shape[0], len(self.location_ids)))
        scores[:, :-1] = Z @ self.coef.T
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=1, keepdims=True)
        return p


def _design(cov_rows, feature_names, cat_levels, num_stats) -> np.ndarray:
    cols = [np.ones((len(cov_rows), 1))]
    for j, name in enumerate(feature_names):
        vals = [row[name] for row in cov_rows]
        if cat_levels[j] is not None:
            for lv in cat_levels[j]:
                cols.append(np.array([1.0 if v == lv else 0.0 for v in vals])[:, None])
        else:
            mean, sd = num_stats[j]
            arr = (np.array(vals, dtype=float) - mean) / sd
            cols.append(arr[:, None])
    return np.hstack(cols)


def _penalized_ll(W, Z, Y, l2):
    """Mean log-likelihood minus ridge penalty; gradient w.r.t. W.

    W is (K-1, 1+d); the reference class has an implicit zero row. The
    intercept column is unpenalized.
    """
    n, K = Y.shape
    scores = np.zeros((n, K))
    scores[:, :-1] = Z @ W.T
    scores -= scores.max(axis=1, keepdims=True)
    exps = np.exp(scores)
    P = exps / exps.sum(axis=1, keepdims=True)
    ll = float(np.sum(Y * np.log(np.clip(P, 1e-300, None)))) / n
    pen = W.copy()
    pen[:, 0] = 0.0
    obj = ll - 0.5 * l2 * float((pen**2).sum())
    grad = (Y - P)[:, :-1].T @ Z / n - l2 * pen
    return obj, grad


def fit_mnl(train: Dataset, coarse_features, l2: float = 1e-3,
            tol: float = 1e-6, max_iter: int = 500) -> MultinomialLogitModel:
    """Fit the landing-share multinomial logit on a coarse feature subset.

    Locations with zero training landings are excluded with a warning.
    Converges when the gradient max-norm drops below `tol` or after
    `max_iter` ascent steps; fully deterministic.
    """
    coarse_features = tuple(coarse_features)
    for name in coarse_features:
        if name not in train.schema:
            raise KeyError(f"coarse feature {name!r} not in schema")

    landings = train.landings()
    present = set(int(l) for l in landings)
    location_ids = tuple(loc.id for loc in train.locations if loc.id in present)
    excluded = tuple(loc.id for loc in train.locations if loc.id not in present)
    for loc_id in excluded:
        log.warning("location %d has zero training landings; excluded from MNL", loc_id)
    if len(location_ids) < 2:
        raise ValueError("need >= 2 locations with training landings")

    cat_levels, num_stats = [], []
    for name in coarse_features:
        spec = train.schema[name]
        if spec.kind == "categorical":
            cat_levels.append(tuple(spec.levels))
            num_stats.append(None)
        else:
            col = train.column(name)
            cat_levels.append(None)
            num_stats.append((float(col.mean()), float(col.std()) or 1.0))

    cov_rows = [r.covariates for r in train.records]
    Z = _design(cov_rows, coarse_features, cat_levels, num_stats)
    col_of = {loc_id: j for j, loc_id in enumerate(location_ids)}
    Y = np.zeros((len(train), len(location_ids)))
    Y[np.arange(len(train)), [col_of[int(l)] for l in landings]] = 1.0

    W = np.zeros((len(location_ids) - 1, Z.shape[1]))
    obj, grad = _penalized_ll(W, Z, Y, l2)
    prev_W = prev_grad = None
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.abs(grad).max())
        if gnorm < tol:
            break
        # Barzilai-Borwein spectral step seeds the line search
        step = 1.0
        if prev_W is not None:
            s = W - prev_W
            yd = grad - prev_grad
            denom = float((s * yd).sum())
            if denom < 0:
                step = -float((s * s).sum()) / denom
        gsq = float((grad**2).sum())
        while True:  # Armijo backtracking on the ascent direction
            cand = W + step * grad
            cand_obj, cand_grad = _penalized_ll(cand, Z, Y, l2)
            if cand_obj >= obj + 1e-4 * step * gsq or step < 1e-12:
                break
            step *= 0.5
        prev_W, prev_grad = W, grad
        W, obj, grad = cand, cand_obj, cand_grad

    return MultinomialLogitModel(
        location_ids=location_ids,
        reference=location_ids[-1],
        feature_names=coarse_features,
        coef=W,
        l2=l2,
        iterations=it,
        grad_norm=float(np.abs(grad).max()),
        cat_levels=tuple(cat_levels),
        num_stats=tuple(num_stats),
        excluded=excluded,
    )


# --- rankings and acceptable sets ------------------------------------------


@dataclass(frozen=True)
class PreferenceRanking:
    """Per-individual preference order over modeled locations.

    `order[i]` lists location ids from most preferred (rank 1) outward;
    `probs[i]` holds the matching predicted landing probabilities in the
    fixed `location_ids` column order.
    """

    ids: np.ndarray          # (n,)
    location_ids: tuple
    order: np.ndarray        # (n, K) int location ids by rank
    probs: np.ndarray        # (n, K) aligned to location_ids

    def row(self, rec_id: int) -> np.ndarray:
        idx = int(np.flatnonzero(self.ids == rec_id)[0])
        return self.order[idx]


def rank_scores(scores: np.ndarray, location_ids, rng=None) -> np.ndarray:
    """Location ids sorted by descending score.

    Exact score ties are permuted uniformly at random when an rng is
    given; with rng=None ties break toward the lower location id. The
    random keys are drawn per location before sorting, so any strictly
    monotone transform of the scores yields the same ranking.
    """
    loc = np.asarray(location_ids)
    if rng is None:
        keys = loc.astype(float)  # deterministic: lower id wins ties
    else:
        keys = rng.random(loc.size)
    idx = np.lexsort((keys, -np.asarray(scores, dtype=float)))
    return loc[idx]


def rank_locations(mnl: MultinomialLogitModel, covariates: dict, rng=None) -> np.ndarray:
    """Preference rank order for one profile (most preferred first)."""
    return rank_scores(mnl.probabilities(covariates), mnl.location_ids, rng)


def rank_all(mnl: MultinomialLogitModel, dataset: Dataset, seed: int = 0) -> PreferenceRanking:
    """Rank every record; tie-break rng derives from (seed, record id)."""
    Z = _design(
        [r.covariates for r in dataset.records],
        mnl.feature_names, mnl.cat_levels, mnl.num_stats,
    )
    probs = mnl.probability_matrix(Z)
    ids = dataset.ids()
    K = len(mnl.location_ids)
    loc = np.asarray(mnl.location_ids)
    keys = np.empty((len(dataset), K))
    for i, rid in enumerate(ids):
        keys[i] = derive_rng(seed, "rank", int(rid)).random(K)
    # lexsort per row: random key within exact probability ties
    idx = np.lexsort((keys, -probs), axis=1)
    return PreferenceRanking(ids=ids, location_ids=mnl.location_ids,
                             order=loc[idx], probs=probs)


@dataclass(frozen=True)
class AcceptableSet:
    """Top-phi acceptable locations per individual."""

    ids: np.ndarray
    members: tuple     # per individual: frozenset of location ids
    sizes: np.ndarray  # t_i

    def row(self, rec_id: int) -> frozenset:
        idx = int(np.flatnonzero(self.ids == rec_id)[0])
        return self.members[idx]


def acceptable_set(ranking_row: np.ndarray, phi: int) -> frozenset:
    """Top min(phi, K) preference-ranked locations."""
    if phi < 1:
        raise ValueError("phi must be >= 1")
    t = min(phi, len(ranking_row))
    return frozenset(int(l) for l in ranking_row[:t])


def acceptable_sets(ranking: PreferenceRanking, phi: int) -> AcceptableSet:
    if phi < 1:
        raise ValueError("phi must be >= 1")
    t = min(phi, ranking.order.shape[1])
    members = tuple(frozenset(int(l) for l in row[:t]) for row in ranking.order)
    return AcceptableSet(
        ids=ranking.ids,
        members=members,
        sizes=np.full(len(members), t, dtype=np.int64),
    )


def mnl_to_json(model: MultinomialLogitModel) -> dict:
    return {
        "location_ids": list(model.location_ids),
        "reference": model.reference,
        "feature_names": list(model.feature_names),
        "coef": model.coef.tolist(),
        "l2": model.l2,
        "iterations": model.iterations,
        "grad_norm": model.grad_norm,
        "cat_levels": [None if c is None else list(c) for c in model.cat_levels],
        "num_stats": [None if s is None else list(s) for s in model.num_stats],
        "excluded": list(model.excluded),
    }


def mnl_from_json(obj: dict) -> MultinomialLogitModel:
    return MultinomialLogitModel(
        location_ids=tuple(obj["location_ids"]),
        reference=obj["reference"],
        feature_names=tuple(obj["feature_names"]),
        coef=np.array(obj["coef"], dtype=np.float64),
        l2=obj["l2"],
        iterations=obj["iterations"],
        grad_norm=obj["grad_norm"],
        cat_levels=tuple(None if c is None else tuple(c) for c in obj["cat_levels"]),
        num_stats=tuple(None if s is None else tuple(s) for s in obj["num_stats"]),
        excluded=tuple(obj["excluded"]),
    )


def save_mnl(model: MultinomialLogitModel, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mnl_to_json(model), fh, sort_keys=True)


def load_mnl(path) -> MultinomialLogitModel:
    import json

    with open(path, encoding="utf-8") as fh:
        return mnl_from_json(json.load(fh))


def write_preference_report(ranking: PreferenceRanking, path) -> None:
    """CSV of (individual id, location id, probability, rank)."""
    import csv

    col_of = {loc_id: j for j, loc_id in enumerate(ranking.location_ids)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual_id", "location_id", "probability", "rank"])
        for i, rid in enumerate(ranking.ids):
            for rank, loc_id in enumerate(ranking.order[i], start=1):
                writer.writerow(
                    [int(rid), int(loc_id),
                     repr(float(ranking.probs[i, col_of[int(loc_id)]])), rank]
                )
