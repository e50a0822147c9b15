"""Shared fixtures: small worlds for unit tests, one desk-scale pipeline
(n=10,000, K=20) built once per session for the acceptance suite."""

from __future__ import annotations

import time

import numpy as np
import pytest

from geomatch import cli
from geomatch.backtest import SimulationInputs
from geomatch.boosting import TuningGrid, fit_location_models, load_modelset
from geomatch.datamodel import load_dataset, load_locations, load_schema
from geomatch.preferences import load_mnl, rank_all
from geomatch.recommender import build_prediction_matrix, load_matrix
from geomatch.seeds import derive_seed
from geomatch.synth import GeneratorConfig, generate_synthetic, load_ground_truth

DESK_SEED = 20240
DESK_N = 10_000
DESK_K = 20


@pytest.fixture(scope="session")
def small_world():
    return generate_synthetic(GeneratorConfig(n=600, k=5, seed=11))


@pytest.fixture(scope="session")
def tiny_grid():
    return TuningGrid((2, 3), (0.2,), (1.0,), 40, 20, 4)


@pytest.fixture(scope="session")
def small_models(small_world, tiny_grid):
    dataset, _ = small_world
    return fit_location_models(dataset, tiny_grid, min_rows=40, seed=3, folds=4)


@pytest.fixture(scope="session")
def small_inputs(small_world, small_models):
    dataset, _ = small_world
    matrix = build_prediction_matrix(small_models, dataset)
    from geomatch.preferences import fit_mnl

    mnl = fit_mnl(dataset, ("education", "age_band"), l2=1e-3)
    ranking = rank_all(mnl, dataset, seed=5)
    return SimulationInputs(matrix, dataset, ranking)


@pytest.fixture(scope="session")
def cli_workdir(tmp_path_factory):
    """A small but complete pipeline built through the CLI."""
    workdir = tmp_path_factory.mktemp("cliworld")
    assert cli.main(["generate", "--n", "1500", "--k", "6", "--seed", "11",
                     "--out", str(workdir)]) == 0
    assert cli.main(["train", "--workdir", str(workdir), "--min-rows", "40",
                     "--folds", "4"]) == 0
    assert cli.main(["predict", "--workdir", str(workdir)]) == 0
    return workdir


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Default-scale pipeline: generate, train (desk grid), matrix, ranking.

    Built via the CLI so the manifest exists for the service; the train
    wall time is recorded for the runtime criterion.
    """
    workdir = tmp_path_factory.mktemp("desk")
    assert cli.main(["generate", "--n", str(DESK_N), "--k", str(DESK_K),
                     "--seed", str(DESK_SEED), "--out", str(workdir)]) == 0
    t0 = time.time()
    assert cli.main(["train", "--workdir", str(workdir), "--grid", "desk",
                     "--folds", "10", "--jobs", "2"]) == 0
    train_seconds = time.time() - t0
    assert cli.main(["predict", "--workdir", str(workdir)]) == 0

    schema = load_schema(workdir / "schema.json")
    locations = load_locations(workdir / "locations.json")
    dataset = load_dataset(workdir / "dataset.csv", schema, locations)
    truth = load_ground_truth(workdir / "groundtruth.json")
    modelset = load_modelset(workdir / "models")
    matrix = load_matrix(workdir / "matrix.csv")
    mnl = load_mnl(workdir / "mnl.json")
    ranking = rank_all(mnl, dataset, seed=derive_seed(DESK_SEED, "ranking"))
    return {
        "workdir": workdir,
        "dataset": dataset,
        "truth": truth,
        "modelset": modelset,
        "matrix": matrix,
        "mnl": mnl,
        "ranking": ranking,
        "inputs": SimulationInputs(matrix, dataset, ranking),
        "train_seconds": train_seconds,
    }
