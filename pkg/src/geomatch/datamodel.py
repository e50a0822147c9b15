"""Core record/dataset types, schema-validated CSV ingestion, and
income quantile ranks.

A dataset is an immutable bundle of (schema, records, locations). The
schema declares every covariate as either categorical (finite level set
that always includes an explicit "missing" level) or numeric. Unknown
categorical tokens encountered at load time are mapped to "missing" and
counted rather than dropped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

MISSING = "missing"


class SchemaError(ValueError):
    """A file or value does not conform to the declared schema."""


class ParseError(ValueError):
    """A CSV token could not be parsed, with the offending row."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "categorical" | "numeric"
    levels: tuple[str, ...] = ()
    units: str | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise SchemaError(f"feature {self.name!r}: categorical needs levels")
            if MISSING not in self.levels:
                object.__setattr__(self, "levels", self.levels + (MISSING,))
        elif self.levels:
            raise SchemaError(f"feature {self.name!r}: numeric feature has levels")


@dataclass(frozen=True)
class Schema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def __getitem__(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def validate_covariates(self, cov: dict) -> None:
        """Raise SchemaError unless `cov` is a complete, in-schema row."""
        for f in self.features:
            if f.name not in cov:
                raise SchemaError(f"missing feature {f.name!r}")
            v = cov[f.name]
            if f.kind == "categorical":
                if v not in f.levels:
                    raise SchemaError(f"feature {f.name!r}: unknown level {v!r}")
            else:
                if not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise SchemaError(f"feature {f.name!r}: non-finite value {v!r}")

    def coerce_covariates(self, cov: dict) -> tuple[dict, int]:
        """Coerce a raw mapping to a schema-valid row.

        Unknown categorical levels become "missing"; returns the cleaned
        row and the number of such substitutions.
        """
        out, warnings = {}, 0
        for f in self.features:
            if f.name not in cov:
                raise SchemaError(f"missing feature {f.name!r}")
            v = cov[f.name]
            if f.kind == "categorical":
                v = str(v)
                if v not in f.levels:
                    v = MISSING
                    warnings += 1
            else:
                v = float(v)
                if not math.isfinite(v):
                    raise SchemaError(f"feature {f.name!r}: non-finite value")
            out[f.name] = v
        return out, warnings

    def to_json(self) -> dict:
        out = {}
        for f in self.features:
            entry: dict = {"kind": f.kind}
            if f.kind == "categorical":
                entry["levels"] = list(f.levels)
            if f.units:
                entry["units"] = f.units
            out[f.name] = entry
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        feats = []
        for name, entry in obj.items():
            feats.append(
                FeatureSpec(
                    name=name,
                    kind=entry["kind"],
                    levels=tuple(entry.get("levels", ())),
                    units=entry.get("units"),
                )
            )
        return cls(tuple(feats))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class LocationId:
    """One recommendation unit: a synthetic economic region."""

    id: int
    name: str
    population: float
    unemployment_rate: float
    annual_rent: float
    growth_rate: float = 0.0

    def __post_init__(self):
        if self.population <= 0:
            raise ValueError(f"location {self.id}: population must be > 0")
        if not 0.0 <= self.unemployment_rate <= 1.0:
            raise ValueError(f"location {self.id}: unemployment_rate outside [0,1]")
        if self.annual_rent < 0:
            raise ValueError(f"location {self.id}: annual_rent must be >= 0")


@dataclass(frozen=True)
class ImmigrantRecord:
    """One row of the administrative data: covariates, landing, outcome."""

    id: int
    covariates: dict
    landing: int
    outcome: float
    case_size: int = 1
    spouse_outcome: float | None = None

    def __post_init__(self):
        if self.outcome < 0:
            raise ValueError(f"record {self.id}: outcome must be >= 0")
        if self.case_size < 1:
            raise ValueError(f"record {self.id}: case_size must be >= 1")
        if self.spouse_outcome is not None and self.case_size < 2:
            raise ValueError(f"record {self.id}: spouse_outcome needs case_size >= 2")


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    records: tuple[ImmigrantRecord, ...]
    locations: tuple[LocationId, ...]
    unknown_level_warnings: int = 0

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate record ids")
        known = {loc.id for loc in self.locations}
        for r in self.records:
            if r.landing not in known:
                raise ValueError(f"record {r.id}: unknown landing location {r.landing}")
            self.schema.validate_covariates(r.covariates)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def location_ids(self) -> tuple[int, ...]:
        return tuple(loc.id for loc in self.locations)

    def location(self, loc_id: int) -> LocationId:
        for loc in self.locations:
            if loc.id == loc_id:
                return loc
        raise KeyError(loc_id)

    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records], dtype=np.int64)

    def outcomes(self) -> np.ndarray:
        return np.array([r.outcome for r in self.records], dtype=np.float64)

    def landings(self) -> np.ndarray:
        return np.array([r.landing for r in self.records], dtype=np.int64)

    def case_sizes(self) -> np.ndarray:
        return np.array([r.case_size for r in self.records], dtype=np.int64)

    def column(self, feature: str) -> np.ndarray:
        """Raw covariate column: float array for numeric, object for categorical."""
        spec = self.schema[feature]
        vals = [r.covariates[feature] for r in self.records]
        if spec.kind == "numeric":
            return np.array(vals, dtype=np.float64)
        return np.array(vals, dtype=object)

    def subset(self, index) -> "Dataset":
        recs = tuple(self.records[i] for i in np.atleast_1d(index))
        return Dataset(self.schema, recs, self.locations)


def income_quantile_ranks(dataset: Dataset) -> np.ndarray:
    """Empirical quantile rank of each record's outcome, in (0,1).

    Ties get their averaged rank; q = (avg_rank - 0.5) / n, so the lowest
    income maps near 0 and the highest near 1 without ever touching the
    boundary.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    y = dataset.outcomes()
    return (rankdata(y, method="average") - 0.5) / len(y)


# --- file formats ---------------------------------------------------------
#
# dataset CSV: header = schema features + landing + outcome
#              (+ optional case_size, spouse_outcome); UTF-8, '.' decimals
# schema JSON: {feature: {kind, levels?, units?}}
# locations JSON: [{id, name, population, unemployment_rate, annual_rent,
#                   growth_rate}]

_RESERVED = ("id", "landing", "outcome", "case_size", "spouse_outcome")


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def write_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)


def load_locations(path) -> tuple[LocationId, ...]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return tuple(LocationId(**entry) for entry in raw)


def write_locations(locations, path) -> None:
    rows = [
        {
            "id": loc.id,
            "name": loc.name,
            "population": loc.population,
            "unemployment_rate": loc.unemployment_rate,
            "annual_rent": loc.annual_rent,
            "growth_rate": loc.growth_rate,
        }
        for loc in locations
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)


def _locations_sidecar(path: Path) -> Path:
    return path.with_suffix(".locations.json")


def load_dataset(path, schema: Schema, locations=None) -> Dataset:
    """Load and validate a dataset CSV against `schema`.

    Locations come from `locations` or, when omitted, from the
    `<stem>.locations.json` sidecar next to the CSV. Unknown categorical
    levels are mapped to "missing" and tallied in
    `Dataset.unknown_level_warnings`.
    """
    path = Path(path)
    if locations is None:
        sidecar = _locations_sidecar(path)
        if not sidecar.exists():
            raise SchemaError(f"no locations given and {sidecar.name} not found")
        locations = load_locations(sidecar)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in list(schema.names) + ["landing", "outcome"]:
            if col not in header:
                raise SchemaError(f"missing required column {col!r}")

        records, warnings = [], 0
        for rownum, row in enumerate(reader, start=2):  # 1-based incl. header
            cov = {}
            for spec in schema.features:
                token = row[spec.name]
                if spec.kind == "numeric":
                    try:
                        cov[spec.name] = float(token)
                    except ValueError:
                        raise ParseError(
                            f"row {rownum}: non-numeric token {token!r} "
                            f"in column {spec.name!r}"
                        ) from None
                else:
                    if token in spec.levels:
                        cov[spec.name] = token
                    else:
                        cov[spec.name] = MISSING
                        warnings += 1
            try:
                landing = int(row["landing"])
                outcome = float(row["outcome"])
            except ValueError:
                raise ParseError(f"row {rownum}: bad landing/outcome token") from None
            case_size = int(row["case_size"]) if row.get("case_size") else 1
            spouse = row.get("spouse_outcome")
            spouse_outcome = float(spouse) if spouse not in (None, "") else None
            rec_id = int(row["id"]) if row.get("id") else rownum - 2
            records.append(
                ImmigrantRecord(
                    id=rec_id,
                    covariates=cov,
                    landing=landing,
                    outcome=outcome,
                    case_size=case_size,
                    spouse_outcome=spouse_outcome,
                )
            )

    return Dataset(schema, tuple(records), tuple(locations), warnings)


def write_dataset(dataset: Dataset, path, with_sidecar: bool = True) -> None:
    """Write the dataset CSV (repr-precision floats, exact round-trip)."""
    path = Path(path)
    cols = ["id", *dataset.schema.names, "landing", "outcome", "case_size", "spouse_outcome"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in dataset.records:
            row = [r.id]
            for spec in dataset.schema.features:
                v = r.covariates[spec.name]
                row.append(repr(v) if spec.kind == "numeric" else v)
            row += [r.landing, repr(r.outcome), r.case_size]
            row.append("" if r.spouse_outcome is None else repr(r.spouse_outcome))
            writer.writerow(row)
    if with_sidecar:
        write_locations(dataset.locations, _locations_sidecar(path))
