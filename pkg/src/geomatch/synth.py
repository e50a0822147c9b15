"""Seeded synthetic administrative population with known potential outcomes.

The generator draws covariates, location attributes, unobservables and a
full n x K potential-outcome matrix, then assigns each individual a landing
location under one of three selection regimes:

  observables-only  choice scores depend only on education and age band
                    (plus fixed location attributes), so within any
                    (education, age band) cell the landing is independent
                    of everything else and chooser/non-chooser mean
                    potential outcomes coincide up to sampling noise;
  u-confounded      adds a pull toward populous locations proportional to
                    the person-level unobservable u;
  v-confounded      adds a pull toward locations where the person's
                    location-specific unobservable v is high, planting a
                    positive chooser premium at every location.

Potential outcomes follow

  Y_i(a) = clip(base + f_age(age, occ) + edu_premium * (1 + s_pop * popz_a)
                + occ_base + occ_x_edu + synergy[occ, a] + language
                + permit * local_labor(a) + year_trend + month_season
                + unemployment_drag(a) + u_i + v_ia + eps_i, 0)

with an age-earnings bump whose peak location shifts by occupation, a
world-seeded occupation x education table, and a world-seeded
occupation x location synergy table. The interactions (age bump,
occ x edu, occ x location) are what a per-location additive linear model
cannot represent.

Documented magnitudes used by tests:

  WITHIN_CELL_SD_BOUND  upper bound on the within-(education, age band)
                        standard deviation of any potential outcome;
  bias_noise_floor      sampling-noise ceiling for the chooser-vs-
                        non-chooser mean gap in unconfounded cells;
  V_CHOSEN_GAP_RANGE    expected range (in sd units) of the mean-v gap
                        between chosen and unchosen locations under
                        v-confounded selection at default strength.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    MISSING,
    Dataset,
    FeatureSpec,
    ImmigrantRecord,
    LocationId,
    Schema,
)
from .seeds import derive_rng

SELECTION_MODES = ("observables-only", "u-confounded", "v-confounded")

EDUCATION_LEVELS = ("highschool", "college", "bachelor", "graduate")
OCCUPATIONS = (
    "health", "tech", "trades", "services",
    "finance", "education", "manufacturing", "arts",
)
AGE_BANDS = ("18-29", "30-44", "45plus")

# earnings structure (currency/year)
BASE_INCOME = 34_000.0
AGE_AMP = 24_000.0
AGE_WIDTH = 9.0
EDU_PREMIUM = {
    "highschool": 0.0, "college": 5_000.0, "bachelor": 11_000.0,
    "graduate": 18_000.0, MISSING: 4_000.0,
}
EDU_POP_SYNERGY = 0.08
OCC_BASE = {
    "health": 7_000.0, "tech": 9_000.0, "trades": 2_000.0, "services": -5_000.0,
    "finance": 6_000.0, "education": 0.0, "manufacturing": -1_000.0, "arts": -4_000.0,
}
OCC_PEAK_SHIFT = {
    "health": 4.0, "tech": -6.0, "trades": 0.0, "services": -3.0,
    "finance": 2.0, "education": 5.0, "manufacturing": 1.0, "arts": -2.0,
}
OCC_AGE_SLOPE = {
    "health": 150.0, "tech": -250.0, "trades": 50.0, "services": -100.0,
    "finance": 250.0, "education": 200.0, "manufacturing": 0.0, "arts": -150.0,
}
OCC_EDU_SD = 8_000.0
SYNERGY_SD = 4_000.0
SYNERGY_EDU_SD = 5_000.0
LANGUAGE_BONUS = 4_000.0
PERMIT_BASE = 5_500.0
PERMIT_UNEMP_SCALE = 0.25
UNEMP_DRAG = 40_000.0
YEAR_TREND = 1_300.0
MONTH_AMP = 1_500.0
U_SD = 5_000.0
V_SD = 4_500.0
EPS_SD = 7_000.0

# selection strengths (logit scale); group-by-location affinity tables keep
# choice a function of (education, age band, location) only, while giving
# different groups genuinely different preference orderings
POP_PULL = 0.8
EDU_PULL = {"highschool": -0.2, "college": 0.0, "bachelor": 0.2,
            "graduate": 0.45, MISSING: 0.0}
AGE_PULL = {"18-29": 0.25, "30-44": 0.0, "45plus": -0.25}
PREF_AFFINITY_SD = 1.0
U_CONF = 0.7
V_CONF = 0.9

# documented magnitudes (see module docstring)
WITHIN_CELL_SD_BOUND = 26_000.0
NOISE_FLOOR_SIGMA = 5.0
V_CHOSEN_GAP_RANGE = (0.3, 1.2)  # units of V_SD

EDUCATION_MISSING_SHARE = 0.02


def age_band(age) -> np.ndarray:
    """Coarse age band used for stratified audits and selection."""
    age = np.asarray(age, dtype=float)
    bands = np.where(age < 30, AGE_BANDS[0], np.where(age < 45, AGE_BANDS[1], AGE_BANDS[2]))
    return bands.astype(object)


def bias_noise_floor(n_choosers: int, n_nonchoosers: int) -> float:
    """Ceiling on |chooser mean - non-chooser mean| from sampling alone."""
    return NOISE_FLOOR_SIGMA * WITHIN_CELL_SD_BOUND * math.sqrt(
        1.0 / n_choosers + 1.0 / n_nonchoosers
    )


def default_schema() -> Schema:
    return Schema(
        (
            FeatureSpec("age", "numeric", units="years"),
            FeatureSpec("age_band", "categorical", AGE_BANDS),
            FeatureSpec("education", "categorical", EDUCATION_LEVELS),
            FeatureSpec("occupation", "categorical", OCCUPATIONS),
            FeatureSpec("language", "categorical", ("yes", "no")),
            FeatureSpec("prior_permit", "categorical", ("yes", "no")),
            FeatureSpec("arrival_year", "numeric", units="year"),
            FeatureSpec("arrival_month", "numeric", units="month"),
        )
    )


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    k: int
    selection: str = "observables-only"
    seed: int = 0
    constant_v: bool = False
    spouse_share: float = 0.4  # share of cases with a second adult

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {self.selection!r}")


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Known potential outcomes and unobservables for a generated cohort."""

    ids: np.ndarray                 # (n,)
    location_ids: np.ndarray        # (K,)
    potential_outcomes: np.ndarray  # (n, K)
    u: np.ndarray                   # (n,)
    v: np.ndarray                   # (n, K)
    noise: np.ndarray               # (n,)

    def row(self, rec_id: int) -> np.ndarray:
        idx = int(np.flatnonzero(self.ids == rec_id)[0])
        return self.potential_outcomes[idx]

    def outcome_at(self, rec_id: int, loc_id: int) -> float:
        col = int(np.flatnonzero(self.location_ids == loc_id)[0])
        return float(self.row(rec_id)[col])

    def to_json(self) -> dict:
        out = {}
        for i, rid in enumerate(self.ids):
            out[str(int(rid))] = {
                "potential_outcomes": self.potential_outcomes[i].tolist(),
                "u": float(self.u[i]),
                "v": self.v[i].tolist(),
                "noise": float(self.noise[i]),
            }
        return {"location_ids": self.location_ids.tolist(), "records": out}

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticGroundTruth":
        recs = obj["records"]
        ids = np.array([int(r) for r in recs], dtype=np.int64)
        order = np.argsort(ids)
        ids = ids[order]
        keys = [str(int(r)) for r in ids]
        return cls(
            ids=ids,
            location_ids=np.array(obj["location_ids"], dtype=np.int64),
            potential_outcomes=np.array(
                [recs[k]["potential_outcomes"] for k in keys], dtype=np.float64
            ),
            u=np.array([recs[k]["u"] for k in keys], dtype=np.float64),
            v=np.array([recs[k]["v"] for k in keys], dtype=np.float64),
            noise=np.array([recs[k]["noise"] for k in keys], dtype=np.float64),
        )


def save_ground_truth(gt: SyntheticGroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gt.to_json(), fh)


def load_ground_truth(path) -> SyntheticGroundTruth:
    with open(path, encoding="utf-8") as fh:
        return SyntheticGroundTruth.from_json(json.load(fh))


def _make_locations(k: int, seed: int) -> tuple[LocationId, ...]:
    rng = derive_rng(seed, "locations")
    log_pop = rng.uniform(math.log(6e4), math.log(3e6), size=k)
    pop = np.exp(log_pop)
    popz = (log_pop - log_pop.mean()) / max(log_pop.std(), 1e-9)
    # mild congestion: larger labor markets trend slightly tighter
    unemp = np.clip(rng.uniform(0.03, 0.12, size=k) + 0.012 * popz, 0.02, 0.14)
    rent = np.clip(9_000 + 5_000 * popz + rng.normal(0, 1_200, size=k), 6_000, None)
    growth = rng.uniform(-0.02, 0.10, size=k)
    return tuple(
        LocationId(
            id=i + 1,
            name=f"region-{i + 1:02d}",
            population=float(round(pop[i])),
            unemployment_rate=float(round(unemp[i], 4)),
            annual_rent=float(round(rent[i], 2)),
            growth_rate=float(round(growth[i], 4)),
        )
        for i in range(k)
    )


def location_popz(locations) -> np.ndarray:
    """Standardized log-population across a location set."""
    log_pop = np.log(np.array([loc.population for loc in locations]))
    return (log_pop - log_pop.mean()) / max(log_pop.std(), 1e-9)


def generate_synthetic(config: GeneratorConfig) -> tuple[Dataset, SyntheticGroundTruth]:
    """Draw a full synthetic cohort; identical config yields identical output."""
    n, k = config.n, config.k
    schema = default_schema()
    locations = _make_locations(k, config.seed)
    popz = location_popz(locations)
    unemp = np.array([loc.unemployment_rate for loc in locations])

    world = derive_rng(config.seed, "world")
    occ_edu = world.normal(0.0, OCC_EDU_SD, size=(len(OCCUPATIONS), len(EDUCATION_LEVELS) + 1))
    synergy = world.normal(0.0, SYNERGY_SD, size=(len(OCCUPATIONS), k))
    aff_edu = world.normal(0.0, PREF_AFFINITY_SD, size=(len(EDUCATION_LEVELS) + 1, k))
    aff_age = world.normal(0.0, PREF_AFFINITY_SD, size=(len(AGE_BANDS), k))
    synergy_edu = world.normal(
        0.0, SYNERGY_EDU_SD, size=(len(OCCUPATIONS), len(EDUCATION_LEVELS) + 1, k)
    )

    rng = derive_rng(config.seed, "population")
    age = 22.0 + 42.0 * rng.beta(2.0, 3.0, size=n)
    bands = age_band(age)
    edu_ix = rng.integers(0, len(EDUCATION_LEVELS), size=n)
    edu = np.array(EDUCATION_LEVELS, dtype=object)[edu_ix]
    miss = rng.random(n) < EDUCATION_MISSING_SHARE
    edu[miss] = MISSING
    edu_ix = np.where(miss, len(EDUCATION_LEVELS), edu_ix)  # missing -> last row
    occ_ix = rng.integers(0, len(OCCUPATIONS), size=n)
    occ = np.array(OCCUPATIONS, dtype=object)[occ_ix]
    language = np.where(rng.random(n) < 0.85, "yes", "no").astype(object)
    permit = np.where(rng.random(n) < 0.55, "yes", "no").astype(object)
    year = rng.integers(2015, 2020, size=n).astype(float)
    month = rng.integers(1, 13, size=n).astype(float)
    case_size = np.where(rng.random(n) < config.spouse_share, 2, 1)

    u = rng.normal(0.0, U_SD, size=n)
    v = np.zeros((n, k)) if config.constant_v else rng.normal(0.0, V_SD, size=(n, k))
    eps = rng.normal(0.0, EPS_SD, size=n)

    # person-level earnings components (independent of location)
    edu_prem = np.array([EDU_PREMIUM[e] for e in edu])
    occ_base = np.array([OCC_BASE[o] for o in occ])
    peak = 40.0 + np.array([OCC_PEAK_SHIFT[o] for o in occ])
    f_age = AGE_AMP * np.exp(-0.5 * ((age - peak) / AGE_WIDTH) ** 2)
    f_age += np.array([OCC_AGE_SLOPE[o] for o in occ]) * (age - 40.0)
    occ_edu_term = occ_edu[occ_ix, edu_ix]
    person = (
        BASE_INCOME
        + f_age
        + occ_base
        + occ_edu_term
        + np.where(language == "yes", LANGUAGE_BONUS, 0.0)
        + YEAR_TREND * (year - 2017.0)
        + MONTH_AMP * np.cos(2.0 * math.pi * (month - 1.0) / 12.0)
        + u
        + eps
    )

    # location-interacting components
    permit_on = (permit == "yes").astype(float)
    local_labor = 1.0 + PERMIT_UNEMP_SCALE * (0.07 - unemp) / 0.03  # (k,)
    potential = (
        person[:, None]
        + edu_prem[:, None] * EDU_POP_SYNERGY * popz[None, :]
        + synergy[occ_ix, :]
        + synergy_edu[occ_ix, edu_ix, :]
        + permit_on[:, None] * PERMIT_BASE * local_labor[None, :]
        - UNEMP_DRAG * (unemp[None, :] - 0.07)
        + v
    )
    potential = np.clip(potential, 0.0, None)

    # landing choice
    band_ix = np.array([AGE_BANDS.index(b) for b in bands])
    score = POP_PULL * popz[None, :] * np.ones((n, 1))
    score += np.array([EDU_PULL[e] for e in edu])[:, None] * popz[None, :]
    score += np.array([AGE_PULL[b] for b in bands])[:, None] * popz[None, :]
    score += aff_edu[edu_ix, :] + aff_age[band_ix, :]
    if config.selection == "u-confounded":
        score += U_CONF * (u / U_SD)[:, None] * popz[None, :]
    elif config.selection == "v-confounded":
        score += V_CONF * (v / V_SD if not config.constant_v else np.zeros((n, k)))
    score -= score.max(axis=1, keepdims=True)
    probs = np.exp(score)
    probs /= probs.sum(axis=1, keepdims=True)
    draws = rng.random(n)
    cum = np.cumsum(probs, axis=1)
    landing_col = (draws[:, None] >= cum).sum(axis=1)
    landing_col = np.minimum(landing_col, k - 1)

    observed = potential[np.arange(n), landing_col]
    spouse_outcome = np.where(
        case_size >= 2,
        np.clip(observed * rng.uniform(0.5, 1.1, size=n), 0.0, None),
        np.nan,
    )

    loc_ids = np.array([loc.id for loc in locations], dtype=np.int64)
    records = []
    for i in range(n):
        records.append(
            ImmigrantRecord(
                id=i,
                covariates={
                    "age": float(age[i]),
                    "age_band": str(bands[i]),
                    "education": str(edu[i]),
                    "occupation": str(occ[i]),
                    "language": str(language[i]),
                    "prior_permit": str(permit[i]),
                    "arrival_year": float(year[i]),
                    "arrival_month": float(month[i]),
                },
                landing=int(loc_ids[landing_col[i]]),
                outcome=float(observed[i]),
                case_size=int(case_size[i]),
                spouse_outcome=None if case_size[i] < 2 else float(spouse_outcome[i]),
            )
        )

    dataset = Dataset(schema, tuple(records), locations)
    truth = SyntheticGroundTruth(
        ids=np.arange(n, dtype=np.int64),
        location_ids=loc_ids,
        potential_outcomes=potential,
        u=u,
        v=v,
        noise=eps,
    )
    return dataset, truth
