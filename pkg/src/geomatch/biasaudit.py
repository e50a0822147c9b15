"""Empirical selection-bias decomposition on synthetic ground truth.

For every (location a, stratum x) cell this computes, from known
potential outcomes:

  theta        mean potential outcome at a over the whole stratum
  theta_prime  mean observed outcome among those who chose a
  theta_dprime mean potential outcome at a among those who did not
  p            chooser share
  bias_bound   theta_prime - theta_dprime

The decomposition theta = theta_prime * p + theta_dprime * (1 - p) is an
exact identity of empirical means whenever 0 < p < 1; boundary cells
report the undefined component as absent. theta_dprime needs potential
outcomes of people at locations they did not choose, so this audit is a
synthetic-world verification tool only: it cannot run on real data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .boosting import ModelSet
from .datamodel import Dataset
from .recommender import build_prediction_matrix
from .synth import SyntheticGroundTruth


@dataclass(frozen=True)
class BiasCell:
    location_id: int
    stratum: tuple
    n_choosers: int
    n_nonchoosers: int
    theta: float
    theta_prime: float | None
    theta_double_prime: float | None
    p: float
    bias_bound: float | None
    se_bound: float | None
    flagged: bool  # under min_cell on either side


@dataclass(frozen=True)
class BiasReport:
    strata_features: tuple
    min_cell: int
    cells: tuple

    def interior(self):
        return [c for c in self.cells if c.bias_bound is not None]

    def qualifying(self, per_side: int):
        return [
            c for c in self.interior()
            if c.n_choosers >= per_side and c.n_nonchoosers >= per_side
        ]

    def max_identity_error(self) -> float:
        worst = 0.0
        for c in self.interior():
            recombined = c.theta_prime * c.p + c.theta_double_prime * (1.0 - c.p)
            worst = max(worst, abs(c.theta - recombined))
        return worst


def _strata_keys(dataset: Dataset, strata_features) -> np.ndarray:
    keys = []
    for name in strata_features:
        if dataset.schema[name].kind != "categorical":
            raise ValueError(f"stratum feature {name!r} must be discrete")
        keys.append(dataset.column(name))
    return np.array(list(zip(*keys)), dtype=object)


def _gt_rows(dataset: Dataset, ground_truth: SyntheticGroundTruth) -> np.ndarray:
    pos = {int(r): i for i, r in enumerate(ground_truth.ids)}
    try:
        return np.array([pos[int(r)] for r in dataset.ids()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"ground truth missing record {exc}") from None


def audit(dataset: Dataset, ground_truth: SyntheticGroundTruth,
          strata_features, min_cell: int = 50) -> BiasReport:
    """All five decomposition quantities per (location, stratum) cell."""
    strata_features = tuple(strata_features)
    keys = _strata_keys(dataset, strata_features)
    rows = _gt_rows(dataset, ground_truth)
    potentials = ground_truth.potential_outcomes[rows]
    observed = dataset.outcomes()
    landings = dataset.landings()

    cells = []
    unique_strata = sorted(set(map(tuple, keys)), key=str)
    for stratum in unique_strata:
        in_stratum = np.all(keys == np.array(stratum, dtype=object), axis=1)
        n_s = int(in_stratum.sum())
        if n_s == 0:
            continue
        for j, loc_id in enumerate(ground_truth.location_ids):
            chooser = in_stratum & (landings == loc_id)
            non = in_stratum & (landings != loc_id)
            nc, nn = int(chooser.sum()), int(non.sum())
            theta = float(potentials[in_stratum, j].mean())
            tp = float(observed[chooser].mean()) if nc else None
            tdp = float(potentials[non, j].mean()) if nn else None
            p = nc / n_s
            if nc and nn:
                bias = tp - tdp
                var_c = float(observed[chooser].var(ddof=1)) if nc > 1 else 0.0
                var_n = float(potentials[non, j].var(ddof=1)) if nn > 1 else 0.0
                se = math.sqrt(var_c / nc + var_n / nn) if min(nc, nn) > 1 else None
            else:
                bias, se = None, None
            cells.append(
                BiasCell(
                    location_id=int(loc_id),
                    stratum=stratum,
                    n_choosers=nc,
                    n_nonchoosers=nn,
                    theta=theta,
                    theta_prime=tp,
                    theta_double_prime=tdp,
                    p=p,
                    bias_bound=bias,
                    se_bound=se,
                    flagged=min(nc, nn) < min_cell,
                )
            )
    return BiasReport(strata_features, min_cell, tuple(cells))


@dataclass(frozen=True)
class ModelBiasCell:
    location_id: int
    stratum: tuple
    n: int
    model_mean: float
    theta: float
    gap: float           # model mean - ground-truth mean
    bias_bound: float | None


def model_bias_check(models: ModelSet, dataset: Dataset,
                     ground_truth: SyntheticGroundTruth, strata_features,
                     min_cell: int = 50) -> tuple:
    """Compare fitted-model cell means against true theta per cell.

    Under confounded selection the models estimate the chooser mean, so
    their gap to theta should track the bias bound's sign; under
    selection on the stratifying observables the gap is just fit error.
    """
    report = audit(dataset, ground_truth, strata_features, min_cell)
    bounds = {(c.location_id, c.stratum): c.bias_bound for c in report.cells}
    matrix = build_prediction_matrix(models, dataset, "income")
    keys = _strata_keys(dataset, tuple(strata_features))
    rows = _gt_rows(dataset, ground_truth)
    potentials = ground_truth.potential_outcomes[rows]

    gt_col = {int(l): j for j, l in enumerate(ground_truth.location_ids)}
    cells = []
    for stratum in sorted(set(map(tuple, keys)), key=str):
        in_stratum = np.all(keys == np.array(stratum, dtype=object), axis=1)
        n_s = int(in_stratum.sum())
        if n_s == 0:
            continue
        for j, loc_id in enumerate(matrix.location_ids):
            model_mean = float(matrix.values[in_stratum, j].mean())
            theta = float(potentials[in_stratum, gt_col[int(loc_id)]].mean())
            cells.append(
                ModelBiasCell(
                    location_id=int(loc_id),
                    stratum=stratum,
                    n=n_s,
                    model_mean=model_mean,
                    theta=theta,
                    gap=model_mean - theta,
                    bias_bound=bounds.get((int(loc_id), stratum)),
                )
            )
    return tuple(cells)


def save_bias_report(report: BiasReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["a", "stratum", "n_choosers", "n_nonchoosers", "theta",
             "theta_prime", "theta_double_prime", "p", "bias_bound", "flag"]
        )
        for c in report.cells:
            writer.writerow([
                c.location_id,
                "|".join(str(v) for v in c.stratum),
                c.n_choosers,
                c.n_nonchoosers,
                repr(c.theta),
                "" if c.theta_prime is None else repr(c.theta_prime),
                "" if c.theta_double_prime is None else repr(c.theta_double_prime),
                repr(c.p),
                "" if c.bias_bound is None else repr(c.bias_bound),
                int(c.flagged),
            ])
