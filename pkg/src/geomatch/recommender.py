"""Prediction matrix construction and preference-constrained top-k picks.

The matrix holds one predicted annual outcome per (client, location):
each location's model is applied to every client with that location's
population/unemployment substituted into the feature row. Outcome modes:

  income          predicted annual employment income (floored at 0);
  rent-adjusted   income minus the location's annual two-bedroom rent
                  (may be negative);
  joint-per-adult household income per adult; spouses are approximated
                  by a configurable fraction of the principal
                  applicant's prediction at the same location.

Recommendations sort a client's acceptable locations by predicted value
and return the top z' = min(z, |acceptable|).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boosting import ModelSet
from .datamodel import Dataset, LocationId
from .preferences import rank_scores

OUTCOME_MODES = ("income", "rent-adjusted", "joint-per-adult")
DEFAULT_SPOUSE_RATIO = 0.85


@dataclass(frozen=True)
class PredictionMatrix:
    """n clients x K modeled locations of predicted outcomes."""

    ids: np.ndarray            # (n,) client ids
    location_ids: tuple        # modeled locations only
    values: np.ndarray         # (n, K)
    outcome_mode: str

    def __post_init__(self):
        if self.outcome_mode not in OUTCOME_MODES:
            raise ValueError(f"unknown outcome mode {self.outcome_mode!r}")
        if not np.isfinite(self.values).all():
            raise ValueError("prediction matrix contains non-finite values")

    @property
    def shape(self):
        return self.values.shape

    def column_of(self, loc_id: int) -> int:
        try:
            return self.location_ids.index(loc_id)
        except ValueError:
            raise KeyError(f"location {loc_id} is not modeled") from None

    def row_of(self, rec_id: int) -> np.ndarray:
        idx = int(np.flatnonzero(self.ids == rec_id)[0])
        return self.values[idx]


def build_prediction_matrix(models: ModelSet, clients: Dataset,
                            outcome_mode: str = "income", rents: dict | None = None,
                            spouse_ratio: float = DEFAULT_SPOUSE_RATIO) -> PredictionMatrix:
    """Predict every client at every modeled location.

    Population and unemployment are substituted column-wise so each cell
    reflects the candidate location's conditions; rent enters only as a
    post-hoc subtraction in rent-adjusted mode.
    """
    if outcome_mode not in OUTCOME_MODES:
        raise ValueError(f"unknown outcome mode {outcome_mode!r}")
    loc_ids = tuple(sorted(models.models))
    first = models.models[loc_ids[0]]
    if first.encoder.schema_fingerprint != clients.schema.fingerprint():
        raise ValueError("client schema does not match the model schema fingerprint")

    if outcome_mode == "rent-adjusted":
        if rents is None:
            rents = {loc.id: loc.annual_rent for loc in clients.locations}
        for loc_id in loc_ids:
            if loc_id not in rents:
                raise ValueError(f"rent-adjusted mode: no rent for location {loc_id}")

    encoder = first.encoder
    base = encoder.encode_records(clients)
    n = len(clients)
    values = np.empty((n, len(loc_ids)))
    for j, loc_id in enumerate(loc_ids):
        model = models.models[loc_id]
        X = encoder.substitute_location(base, model.location)
        pred = model.predict_encoded(X)
        if outcome_mode == "rent-adjusted":
            pred = pred - rents[loc_id]
        elif outcome_mode == "joint-per-adult":
            case = clients.case_sizes().astype(float)
            joint = pred * (1.0 + spouse_ratio)
            pred = np.where(case >= 2, joint / case, pred)
        values[:, j] = pred
    return PredictionMatrix(
        ids=clients.ids(),
        location_ids=loc_ids,
        values=values,
        outcome_mode=outcome_mode,
    )


def predict_profile(models: ModelSet, covariates: dict, outcome_mode: str = "income",
                    rents: dict | None = None, case_size: int = 1,
                    spouse_ratio: float = DEFAULT_SPOUSE_RATIO):
    """Per-location predictions for one profile (same math as the matrix).

    Returns (location_ids, values). The online service routes through
    this so its responses replay the offline matrix exactly.
    """
    if outcome_mode not in OUTCOME_MODES:
        raise ValueError(f"unknown outcome mode {outcome_mode!r}")
    loc_ids = tuple(sorted(models.models))
    values = np.empty(len(loc_ids))
    for j, loc_id in enumerate(loc_ids):
        model = models.models[loc_id]
        row = model.encoder.encode_profile(covariates, model.location)
        pred = float(model.predict_encoded(row[None, :])[0])
        if outcome_mode == "rent-adjusted":
            if rents is None or loc_id not in rents:
                raise ValueError(f"rent-adjusted mode: no rent for location {loc_id}")
            pred -= rents[loc_id]
        elif outcome_mode == "joint-per-adult" and case_size >= 2:
            pred = pred * (1.0 + spouse_ratio) / case_size
        values[j] = pred
    return loc_ids, values


@dataclass(frozen=True)
class Recommendation:
    """Ordered top-z' locations for one client."""

    id: int
    locations: tuple       # length z', best first
    values: tuple          # predicted outcome per listed location
    t: int                 # acceptable-set size
    z: int                 # requested list length

    def __post_init__(self):
        if len(self.locations) != min(self.z, self.t):
            raise ValueError("recommendation length must be min(z, t)")


def recommend(row_values: np.ndarray, location_ids, acceptable, z: int,
              rng=None, rec_id: int = -1) -> Recommendation:
    """Top-z' locations of the acceptable set by predicted value.

    Exact value ties are permuted uniformly at random when an rng is
    given, otherwise the lower location id wins (deterministic mode used
    by the online service).
    """
    if z < 1:
        raise ValueError("z must be >= 1")
    loc = np.asarray(location_ids)
    mask = np.isin(loc, list(acceptable))
    if not mask.any():
        raise ValueError("acceptable set has no modeled locations")
    ordered = rank_scores(np.asarray(row_values, dtype=float)[mask], loc[mask], rng)
    z_prime = min(z, int(mask.sum()))
    top = ordered[:z_prime]
    col = {int(l): j for j, l in enumerate(loc)}
    vals = tuple(float(row_values[col[int(l)]]) for l in top)
    return Recommendation(
        id=rec_id,
        locations=tuple(int(l) for l in top),
        values=vals,
        t=int(mask.sum()),
        z=z,
    )


def landing_rank(row_values: np.ndarray, location_ids, actual: int) -> int:
    """Competition rank of the actual landing location within the row.

    Rank 1 + (number of locations with strictly greater predicted value);
    exact ties share the better rank.
    """
    loc = np.asarray(location_ids)
    where = np.flatnonzero(loc == actual)
    if where.size == 0:
        raise KeyError(f"location {actual} is not modeled")
    v = np.asarray(row_values, dtype=float)
    return int(1 + (v > v[where[0]]).sum())


def landing_ranks(matrix: PredictionMatrix, clients: Dataset) -> np.ndarray:
    """Rank of every client's actual landing; unmodeled landings get -1."""
    cols = {loc_id: j for j, loc_id in enumerate(matrix.location_ids)}
    out = np.empty(len(clients), dtype=np.int64)
    for i, rec in enumerate(clients.records):
        j = cols.get(rec.landing)
        if j is None:
            out[i] = -1
        else:
            out[i] = 1 + int((matrix.values[i] > matrix.values[i, j]).sum())
    return out


# --- files ------------------------------------------------------------------


def save_matrix(matrix: PredictionMatrix, path) -> None:
    """CSV with individual_id + one column per location; mode in a sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual_id"] + [str(l) for l in matrix.location_ids])
        for i, rid in enumerate(matrix.ids):
            writer.writerow([int(rid)] + [repr(float(v)) for v in matrix.values[i]])
    sidecar = path.with_suffix(".meta.json")
    sidecar.write_text(
        json.dumps({"outcome_mode": matrix.outcome_mode,
                    "location_ids": list(matrix.location_ids)}, indent=2),
        encoding="utf-8",
    )


def load_matrix(path) -> PredictionMatrix:
    path = Path(path)
    meta = json.loads(path.with_suffix(".meta.json").read_text(encoding="utf-8"))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        loc_ids = tuple(int(c) for c in header[1:])
        ids, rows = [], []
        for row in reader:
            ids.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    return PredictionMatrix(
        ids=np.array(ids, dtype=np.int64),
        location_ids=loc_ids,
        values=np.array(rows, dtype=np.float64),
        outcome_mode=meta["outcome_mode"],
    )


def export_recommendations(recs, path) -> None:
    """JSON lines: {id, locations, values, t, z}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in recs:
            fh.write(json.dumps({
                "id": rec.id,
                "locations": list(rec.locations),
                "values": list(rec.values),
                "t": rec.t,
                "z": rec.z,
            }) + "\n")
