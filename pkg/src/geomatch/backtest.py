"""Monte Carlo backtest of the recommendation policy.

Each individual gets a compliance probability pi_i: either pi_max scaled
down linearly across the observed-income quantile (lowest incomes most
likely to follow) or a constant. A run draws one uniform per individual;
non-compliers stay at their actual location with zero gain, compliers
pick uniformly among their top-z recommended locations inside their
acceptable set (minus any excluded locations) and score the difference
in predicted outcome between the picked and the actual location. A
simulation averages per-run cohort gain, complier gain and location
flows over n_runs runs.

All draws are counter-style hashes of (run seed, individual id, stream),
so results are independent of iteration order and parallel scheduling;
headline currency totals use compensated summation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import Dataset, income_quantile_ranks
from .preferences import PreferenceRanking
from .recommender import OUTCOME_MODES, PredictionMatrix
from .seeds import derive_seed, hash_uniform_matrix, hash_uniforms

COMPLIANCE_MODES = ("linear-in-quantile", "constant")
_STREAM_COMPLY, _STREAM_TIE, _STREAM_CHOOSE = 1, 2, 3

DEFAULT_SUBGROUPS = ("education", "case_size", "arrival_year", "occupation")


@dataclass(frozen=True)
class SimulationConfig:
    """One backtest scenario."""

    pi_max: float
    compliance_mode: str = "linear-in-quantile"
    phi: int | None = None          # None = no preference restriction
    z: int = 3
    n_runs: int = 100
    outcome_mode: str = "income"
    excluded_locations: frozenset = frozenset()
    seed: int = 0
    min_cell: int = 10
    subgroups: tuple = DEFAULT_SUBGROUPS

    def __post_init__(self):
        if not 0.0 <= self.pi_max <= 1.0:
            raise ValueError("pi_max must be in [0, 1]")
        if self.compliance_mode not in COMPLIANCE_MODES:
            raise ValueError(f"unknown compliance mode {self.compliance_mode!r}")
        if self.phi is not None and self.phi < 1:
            raise ValueError("phi must be >= 1 or None")
        if self.z < 1:
            raise ValueError("z must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.outcome_mode not in OUTCOME_MODES:
            raise ValueError(f"unknown outcome mode {self.outcome_mode!r}")
        object.__setattr__(self, "excluded_locations", frozenset(self.excluded_locations))

    def to_json(self) -> dict:
        return {
            "pi_max": self.pi_max,
            "compliance_mode": self.compliance_mode,
            "phi": self.phi,
            "z": self.z,
            "n_runs": self.n_runs,
            "outcome_mode": self.outcome_mode,
            "excluded_locations": sorted(self.excluded_locations),
            "seed": self.seed,
            "min_cell": self.min_cell,
            "subgroups": list(self.subgroups),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimulationConfig":
        obj = dict(obj)
        phi = obj.get("phi")
        if isinstance(phi, str):
            obj["phi"] = None if phi.lower() == "none" else int(phi)
        if "excluded_locations" in obj:
            obj["excluded_locations"] = frozenset(obj["excluded_locations"])
        if "subgroups" in obj:
            obj["subgroups"] = tuple(obj["subgroups"])
        return cls(**obj)


def assign_compliance(dataset: Dataset, pi_max: float,
                      mode: str = "linear-in-quantile") -> np.ndarray:
    """Per-individual compliance probability pi_i.

    Linear mode: pi_i = pi_max * (1 - q_i) with q_i the observed-income
    quantile rank, so the lowest earner sits near pi_max and the highest
    near zero, and the sample mean is pi_max / 2 exactly up to rounding.
    Constant mode: pi_i = pi_max for everyone. No randomness.
    """
    if not 0.0 <= pi_max <= 1.0:
        raise ValueError("pi_max must be in [0, 1]")
    if mode == "constant":
        return np.full(len(dataset), pi_max)
    if mode != "linear-in-quantile":
        raise ValueError(f"unknown compliance mode {mode!r}")
    return pi_max * (1.0 - income_quantile_ranks(dataset))


@dataclass(frozen=True)
class SimulationInputs:
    """Aligned matrix / preference / actual-landing bundle for a cohort."""

    matrix: PredictionMatrix
    dataset: Dataset
    ranking: PreferenceRanking | None = None

    def __post_init__(self):
        if not np.array_equal(self.matrix.ids, self.dataset.ids()):
            raise ValueError("matrix rows and dataset records must align on ids")
        if self.ranking is not None and not np.array_equal(
            self.ranking.ids, self.dataset.ids()
        ):
            raise ValueError("ranking rows and dataset records must align on ids")

    def actual_columns(self) -> np.ndarray:
        """Matrix column of each record's landing; -1 when unmodeled."""
        lookup = {loc_id: j for j, loc_id in enumerate(self.matrix.location_ids)}
        return np.array(
            [lookup.get(int(l), -1) for l in self.dataset.landings()], dtype=np.int64
        )

    def acceptable_mask(self, phi: int | None) -> np.ndarray:
        """(n, K) membership of each matrix column in each acceptable set."""
        n, K = self.matrix.shape
        if phi is None:
            return np.ones((n, K), dtype=bool)
        if self.ranking is None:
            raise ValueError("phi restriction requires a preference ranking")
        mask = np.zeros((n, K), dtype=bool)
        max_id = max(max(self.matrix.location_ids), int(self.ranking.order.max()))
        lookup = np.full(max_id + 1, -1, dtype=np.int64)
        for j, loc_id in enumerate(self.matrix.location_ids):
            lookup[loc_id] = j
        top = min(phi, self.ranking.order.shape[1])
        rows = np.arange(n)
        for pos in range(top):
            cols = lookup[self.ranking.order[:, pos]]
            ok = cols >= 0
            mask[rows[ok], cols[ok]] = True
        return mask


@dataclass(frozen=True)
class SimulationRun:
    """Per-individual outcome of one Monte Carlo run (included rows only)."""

    ids: np.ndarray
    chosen_col: np.ndarray
    actual_col: np.ndarray
    gains: np.ndarray
    complier: np.ndarray
    before_counts: np.ndarray
    after_counts: np.ndarray
    skipped: int       # actual landing not modeled
    emptied: int       # acceptable set emptied by exclusions -> non-complier

    def cohort_gain(self) -> float:
        return math.fsum(self.gains) / self.gains.size if self.gains.size else 0.0

    def complier_gain(self) -> float:
        m = int(self.complier.sum())
        return math.fsum(self.gains[self.complier]) / m if m else 0.0

    def complier_fraction(self) -> float:
        return float(self.complier.mean()) if self.complier.size else 0.0


def simulate_run(matrix: PredictionMatrix, acceptable_mask: np.ndarray | None,
                 actual_cols: np.ndarray, compliance: np.ndarray,
                 config: SimulationConfig, run_seed: int) -> SimulationRun:
    """One Monte Carlo pass over the cohort.

    Individuals whose actual landing is unmodeled are skipped (counted);
    individuals whose acceptable set is emptied by the exclusions become
    non-compliers (counted). Compliance uses draw < pi_i, i.e. a draw
    equal to pi_i means non-compliance.
    """
    n, K = matrix.shape
    ids = matrix.ids
    V = matrix.values
    if acceptable_mask is None:
        acceptable_mask = np.ones((n, K), dtype=bool)
    mask = acceptable_mask.copy()
    for loc_id in config.excluded_locations:
        try:
            mask[:, matrix.column_of(loc_id)] = False
        except KeyError:
            continue  # excluding an unmodeled location is a no-op

    include = actual_cols >= 0
    skipped = int(n - include.sum())
    ids_in = ids[include]
    V_in = V[include]
    mask_in = mask[include]
    actual_in = actual_cols[include]
    pi_in = np.asarray(compliance, dtype=float)[include]
    m = ids_in.size

    t = mask_in.sum(axis=1)
    emptyset = t == 0
    u = hash_uniforms(run_seed, ids_in, _STREAM_COMPLY)
    complier = (u < pi_in) & ~emptyset
    emptied = int((emptyset & (u < pi_in)).sum())

    chosen = actual_in.copy()
    gains = np.zeros(m)
    if complier.any():
        rows = np.flatnonzero(complier)
        tie = hash_uniform_matrix(run_seed, ids_in[rows], K, _STREAM_TIE)
        vals = np.where(mask_in[rows], V_in[rows], -np.inf)
        p1 = np.argsort(tie, axis=1)
        v1 = np.take_along_axis(vals, p1, axis=1)
        p2 = np.argsort(-v1, axis=1, kind="stable")
        order = np.take_along_axis(p1, p2, axis=1)
        z_prime = np.minimum(config.z, t[rows])
        pick = hash_uniforms(run_seed, ids_in[rows], _STREAM_CHOOSE)
        j = np.minimum((pick * z_prime).astype(np.int64), z_prime - 1)
        chosen_rows = order[np.arange(rows.size), j]
        chosen[rows] = chosen_rows
        gains[rows] = V_in[rows, chosen_rows] - V_in[rows, actual_in[rows]]

    return SimulationRun(
        ids=ids_in,
        chosen_col=chosen,
        actual_col=actual_in,
        gains=gains,
        complier=complier,
        before_counts=np.bincount(actual_in, minlength=K),
        after_counts=np.bincount(chosen, minlength=K),
        skipped=skipped,
        emptied=emptied,
    )


def grouping_values(dataset: Dataset, feature: str) -> np.ndarray:
    """Values of a schema feature or the case_size record field."""
    if feature == "case_size":
        return dataset.case_sizes().astype(object)
    return dataset.column(feature).astype(object)


def subgroup_gains(per_individual_gains: np.ndarray, values: np.ndarray,
                   min_cell: int = 10) -> dict:
    """Mean per-individual gain by level; thin levels are suppressed."""
    out = {}
    for level in sorted(set(values.tolist()), key=str):
        sel = values == level
        n = int(sel.sum())
        if n < min_cell:
            out[str(level)] = {"n": n, "mean_gain": None, "suppressed": True}
        else:
            out[str(level)] = {
                "n": n,
                "mean_gain": math.fsum(per_individual_gains[sel]) / n,
                "suppressed": False,
            }
    return out


@dataclass(frozen=True)
class SimulationSummary:
    config: SimulationConfig
    n_individuals: int
    skipped: int
    cohort_gain: float
    cohort_gain_sd: float
    cohort_gain_ci95: float
    complier_gain: float
    complier_gain_sd: float
    complier_gain_ci95: float
    complier_fraction: float
    locations: tuple      # per modeled location: before / mean after / delta
    subgroups: dict
    per_run: tuple        # (cohort_gain, complier_gain, complier_fraction, emptied)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "n_individuals": self.n_individuals,
            "skipped": self.skipped,
            "cohort_gain": self.cohort_gain,
            "cohort_gain_sd": self.cohort_gain_sd,
            "cohort_gain_ci95": self.cohort_gain_ci95,
            "complier_gain": self.complier_gain,
            "complier_gain_sd": self.complier_gain_sd,
            "complier_gain_ci95": self.complier_gain_ci95,
            "complier_fraction": self.complier_fraction,
            "locations": [dict(row) for row in self.locations],
            "subgroups": self.subgroups,
            "per_run": [list(row) for row in self.per_run],
        }


def _mean_sd_ci(values: np.ndarray) -> tuple:
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    ci = 1.96 * sd / math.sqrt(values.size) if values.size > 1 else 0.0
    return mean, sd, ci


def simulate(inputs: SimulationInputs, config: SimulationConfig) -> SimulationSummary:
    """Average n_runs Monte Carlo runs under one scenario."""
    if config.outcome_mode != inputs.matrix.outcome_mode:
        raise ValueError(
            f"config outcome mode {config.outcome_mode!r} != matrix mode "
            f"{inputs.matrix.outcome_mode!r}"
        )
    mask = inputs.acceptable_mask(config.phi)
    actual_cols = inputs.actual_columns()
    compliance = assign_compliance(inputs.dataset, config.pi_max, config.compliance_mode)

    n, K = inputs.matrix.shape
    cohort, complier_g, frac = [], [], []
    per_run = []
    after_total = np.zeros(K)
    gain_sums = None
    before = None
    skipped = 0
    for r in range(config.n_runs):
        run = simulate_run(
            inputs.matrix, mask, actual_cols, compliance, config,
            derive_seed(config.seed, "run", r),
        )
        cohort.append(run.cohort_gain())
        complier_g.append(run.complier_gain())
        frac.append(run.complier_fraction())
        per_run.append((run.cohort_gain(), run.complier_gain(),
                        run.complier_fraction(), run.emptied))
        after_total += run.after_counts
        gain_sums = run.gains if gain_sums is None else gain_sums + run.gains
        before = run.before_counts
        skipped = run.skipped

    mean_c, sd_c, ci_c = _mean_sd_ci(np.array(cohort))
    mean_g, sd_g, ci_g = _mean_sd_ci(np.array(complier_g))

    locations = tuple(
        {
            "location_id": int(loc_id),
            "before": int(before[j]),
            "after": float(after_total[j] / config.n_runs),
            "delta": float(after_total[j] / config.n_runs - before[j]),
        }
        for j, loc_id in enumerate(inputs.matrix.location_ids)
    )

    include = actual_cols >= 0
    per_individual = gain_sums / config.n_runs
    groups = {}
    for feature in config.subgroups:
        try:
            values = grouping_values(inputs.dataset, feature)[include]
        except KeyError:
            continue
        groups[feature] = subgroup_gains(per_individual, values, config.min_cell)

    return SimulationSummary(
        config=config,
        n_individuals=int(include.sum()),
        skipped=skipped,
        cohort_gain=mean_c,
        cohort_gain_sd=sd_c,
        cohort_gain_ci95=ci_c,
        complier_gain=mean_g,
        complier_gain_sd=sd_g,
        complier_gain_ci95=ci_g,
        complier_fraction=float(np.mean(frac)),
        locations=locations,
        subgroups=groups,
        per_run=tuple(per_run),
    )


def sweep(inputs: SimulationInputs, configs) -> list:
    """Run each scenario; tidy rows for the gain-vs-compliance grid."""
    configs = list(configs)
    if not configs:
        raise ValueError("sweep needs at least one config")
    rows = []
    for config in configs:
        s = simulate(inputs, config)
        rows.append(
            {
                "pi_max": config.pi_max,
                "phi": "none" if config.phi is None else config.phi,
                "compliance_mode": config.compliance_mode,
                "outcome_mode": config.outcome_mode,
                "n_runs": config.n_runs,
                "cohort_gain": s.cohort_gain,
                "cohort_gain_ci95": s.cohort_gain_ci95,
                "complier_gain": s.complier_gain,
                "complier_gain_ci95": s.complier_gain_ci95,
                "complier_fraction": s.complier_fraction,
            }
        )
    return rows


def leave_one_out(inputs: SimulationInputs, base_config: SimulationConfig) -> dict:
    """Re-simulate dropping one location at a time.

    Reports per-exclusion mean cohort gains, their across-exclusion mean,
    a normal 95% CI, and the [min, max] coverage interval (which contains
    every per-exclusion gain by construction).
    """
    loc_ids = inputs.matrix.location_ids
    if len(loc_ids) < 2:
        raise ValueError("leave-one-out needs >= 2 locations")
    gains = []
    for loc_id in loc_ids:
        cfg = replace(
            base_config,
            excluded_locations=base_config.excluded_locations | {loc_id},
        )
        s = simulate(inputs, cfg)
        gains.append({"excluded": int(loc_id), "cohort_gain": s.cohort_gain})
    vals = np.array([g["cohort_gain"] for g in gains])
    mean, sd, ci = _mean_sd_ci(vals)
    return {
        "per_location": gains,
        "mean": mean,
        "sd": sd,
        "ci95": ci,
        "coverage_interval": [float(vals.min()), float(vals.max())],
    }


@dataclass(frozen=True)
class SubsetRuleThresholds:
    pop_large: float = 1_500_000.0
    pop_growing: float = 1_000_000.0
    growth: float = 0.05
    pop_small: float = 100_000.0


def exclusions_for_rule(locations, rule: str,
                        thresholds: SubsetRuleThresholds) -> frozenset:
    if rule == "large":
        out = {l.id for l in locations if l.population > thresholds.pop_large}
    elif rule == "large-and-growing":
        out = {
            l.id for l in locations
            if l.population > thresholds.pop_large
            or (l.population > thresholds.pop_growing and l.growth_rate > thresholds.growth)
        }
    elif rule == "small":
        out = {l.id for l in locations if l.population < thresholds.pop_small}
    else:
        raise ValueError(f"unknown subset rule {rule!r}")
    if len(out) >= len(tuple(locations)):
        raise ValueError(f"rule {rule!r} would exclude every location")
    return frozenset(out)


def subset_removal(inputs: SimulationInputs, base_config: SimulationConfig,
                   rule: str, thresholds: SubsetRuleThresholds | None = None):
    """Simulate with a location subset removed per the named rule."""
    thresholds = thresholds or SubsetRuleThresholds()
    excluded = exclusions_for_rule(inputs.dataset.locations, rule, thresholds)
    cfg = replace(base_config, excluded_locations=base_config.excluded_locations | excluded)
    return simulate(inputs, cfg), excluded


# --- files -----------------------------------------------------------------


def save_summary(summary: SimulationSummary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_json(), fh, indent=2, sort_keys=True)


def save_sweep(rows, path) -> None:
    import csv

    cols = ["pi_max", "phi", "compliance_mode", "outcome_mode", "n_runs",
            "cohort_gain", "cohort_gain_ci95", "complier_gain",
            "complier_gain_ci95", "complier_fraction"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


def save_shift(summary: SimulationSummary, path) -> None:
    """Location flow table: before, mean after, delta."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "before", "after", "delta"])
        for row in summary.locations:
            writer.writerow([row["location_id"], row["before"],
                             repr(row["after"]), repr(row["delta"])])


def save_subgroups(summary: SimulationSummary, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "level", "n", "mean_gain", "suppressed"])
        for feature, levels in summary.subgroups.items():
            for level, row in levels.items():
                writer.writerow([
                    feature, level, row["n"],
                    "" if row["mean_gain"] is None else repr(row["mean_gain"]),
                    int(row["suppressed"]),
                ])
