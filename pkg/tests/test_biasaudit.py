import math

import numpy as np
import pytest

from geomatch.biasaudit import audit, model_bias_check, save_bias_report
from geomatch.boosting import TuningGrid, fit_location_models
from geomatch.synth import GeneratorConfig, bias_noise_floor, generate_synthetic

STRATA = ("education", "age_band")


@pytest.fixture(scope="module")
def observables_world():
    return generate_synthetic(GeneratorConfig(n=12_000, k=5, seed=31))


@pytest.fixture(scope="module")
def v_world():
    return generate_synthetic(GeneratorConfig(n=12_000, k=5, seed=31,
                                              selection="v-confounded"))


def test_identity_exact_on_interior_cells(observables_world):
    dataset, truth = observables_world
    report = audit(dataset, truth, STRATA)
    assert len(report.interior()) > 0
    assert report.max_identity_error() < 1e-10


def test_two_path_bias_bound_agreement(observables_world):
    dataset, truth = observables_world
    report = audit(dataset, truth, STRATA)
    keys = np.array(
        list(zip(dataset.column("education"), dataset.column("age_band"))), dtype=object
    )
    landings = dataset.landings()
    observed = dataset.outcomes()
    col = {int(l): j for j, l in enumerate(truth.location_ids)}
    for cell in report.interior()[:40]:
        sel = np.all(keys == np.array(cell.stratum, dtype=object), axis=1)
        choosers = sel & (landings == cell.location_id)
        non = sel & (landings != cell.location_id)
        # independent path: raw compensated sums
        tp = math.fsum(observed[choosers]) / choosers.sum()
        tdp = math.fsum(truth.potential_outcomes[non, col[cell.location_id]]) / non.sum()
        assert cell.bias_bound == pytest.approx(tp - tdp, abs=1e-9)


def test_boundary_cells_report_absent_components():
    dataset, truth = generate_synthetic(GeneratorConfig(n=300, k=2, seed=5))
    report = audit(dataset, truth, ("language",))
    for cell in report.cells:
        if cell.p == 0.0:
            assert cell.theta_prime is None and cell.bias_bound is None
        elif cell.p == 1.0:
            assert cell.theta_double_prime is None and cell.bias_bound is None
        else:
            assert cell.bias_bound is not None


def test_numeric_stratum_feature_rejected(observables_world):
    dataset, truth = observables_world
    with pytest.raises(ValueError, match="discrete"):
        audit(dataset, truth, ("age",))


def test_observables_only_bias_under_noise_floor(observables_world):
    dataset, truth = observables_world
    report = audit(dataset, truth, STRATA)
    qualifying = report.qualifying(200)
    assert qualifying, "expected cells with >= 200 per side at this scale"
    for cell in qualifying:
        floor = bias_noise_floor(cell.n_choosers, cell.n_nonchoosers)
        assert abs(cell.bias_bound) < floor, (cell.location_id, cell.stratum)


def test_v_confounded_positive_premium_at_3_sigma(v_world):
    dataset, truth = v_world
    report = audit(dataset, truth, STRATA)
    qualifying = report.qualifying(200)
    assert qualifying
    # planted premium: choosers exceed non-choosers at every location
    weights = np.array([1.0 / c.se_bound**2 for c in qualifying])
    bounds = np.array([c.bias_bound for c in qualifying])
    aggregate = float((weights * bounds).sum() / weights.sum())
    agg_se = math.sqrt(1.0 / weights.sum())
    assert aggregate > 0
    assert aggregate / agg_se > 3.0


def test_constant_v_collapses_confounding():
    dataset, truth = generate_synthetic(
        GeneratorConfig(n=12_000, k=5, seed=31, selection="v-confounded",
                        constant_v=True)
    )
    report = audit(dataset, truth, STRATA)
    for cell in report.qualifying(200):
        floor = bias_noise_floor(cell.n_choosers, cell.n_nonchoosers)
        assert abs(cell.bias_bound) < floor


def test_average_bias_magnitude_shrinks_with_sample_size():
    mags = {}
    for n in (1_000, 10_000):
        dataset, truth = generate_synthetic(GeneratorConfig(n=n, k=4, seed=13))
        report = audit(dataset, truth, STRATA)
        cells = report.qualifying(20)
        mags[n] = np.mean([abs(c.bias_bound) for c in cells])
    assert mags[10_000] < mags[1_000]


def test_model_bias_check_modes(observables_world, v_world):
    grid = TuningGrid((3,), (0.2,), (1.0,), 60, 30, 5)
    ds_o, gt_o = observables_world
    models_o = fit_location_models(ds_o, grid, min_rows=100, seed=1, folds=4)
    cells_o = model_bias_check(models_o, ds_o, gt_o, STRATA)
    big_o = [c for c in cells_o if c.n >= 400 and c.bias_bound is not None]
    # selection on the stratifiers only: model gaps are fit error, small
    # relative to income scale
    assert np.mean([abs(c.gap) for c in big_o]) < 3_000

    ds_v, gt_v = v_world
    models_v = fit_location_models(ds_v, grid, min_rows=100, seed=1, folds=4)
    cells_v = model_bias_check(models_v, ds_v, gt_v, STRATA)
    big_v = [c for c in cells_v if c.n >= 400 and c.bias_bound is not None]
    # chooser premium pushes fitted models above theta, tracking the bound
    agree = [c for c in big_v if c.bias_bound > 1_000]
    assert agree
    share_positive = np.mean([c.gap > 0 for c in agree])
    assert share_positive > 0.8
    assert np.mean([c.gap for c in agree]) > np.mean([c.gap for c in big_o])


def test_bias_report_csv(tmp_path, observables_world):
    dataset, truth = observables_world
    report = audit(dataset, truth, STRATA)
    path = tmp_path / "bias_report.csv"
    save_bias_report(report, path)
    header = path.read_text().splitlines()[0]
    assert header == ("a,stratum,n_choosers,n_nonchoosers,theta,theta_prime,"
                      "theta_double_prime,p,bias_bound,flag")
    assert len(path.read_text().splitlines()) == len(report.cells) + 1
