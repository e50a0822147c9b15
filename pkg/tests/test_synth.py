import numpy as np
import pytest

from geomatch.synth import (
    V_CHOSEN_GAP_RANGE,
    V_SD,
    WITHIN_CELL_SD_BOUND,
    GeneratorConfig,
    SyntheticGroundTruth,
    bias_noise_floor,
    generate_synthetic,
    load_ground_truth,
    save_ground_truth,
)


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(n=0, k=5)
    with pytest.raises(ValueError):
        GeneratorConfig(n=10, k=1)
    with pytest.raises(ValueError):
        GeneratorConfig(n=10, k=5, selection="by-vibes")


def test_determinism_bit_identical():
    a_ds, a_gt = generate_synthetic(GeneratorConfig(n=100, k=5, seed=7))
    b_ds, b_gt = generate_synthetic(GeneratorConfig(n=100, k=5, seed=7))
    assert a_ds.records == b_ds.records
    assert np.array_equal(a_gt.potential_outcomes, b_gt.potential_outcomes)
    assert np.array_equal(a_gt.v, b_gt.v)
    c_ds, _ = generate_synthetic(GeneratorConfig(n=100, k=5, seed=8))
    assert a_ds.records != c_ds.records


def test_observed_equals_potential_at_landing(small_world):
    dataset, truth = small_world
    col = {int(l): j for j, l in enumerate(truth.location_ids)}
    rows = np.arange(len(dataset))
    cols = np.array([col[r.landing] for r in dataset.records])
    assert np.array_equal(truth.potential_outcomes[rows, cols], dataset.outcomes())
    assert (truth.potential_outcomes >= 0).all()


def test_v_confounded_chosen_gap_in_documented_range():
    ds, gt = generate_synthetic(GeneratorConfig(n=8000, k=10, seed=3,
                                                selection="v-confounded"))
    col = {int(l): j for j, l in enumerate(gt.location_ids)}
    lcol = np.array([col[r.landing] for r in ds.records])
    chosen = gt.v[np.arange(len(ds)), lcol]
    mask = np.ones_like(gt.v, dtype=bool)
    mask[np.arange(len(ds)), lcol] = False
    gap = (chosen.mean() - gt.v[mask].mean()) / V_SD
    lo, hi = V_CHOSEN_GAP_RANGE
    assert lo < gap < hi


def test_observables_only_gap_near_zero():
    ds, gt = generate_synthetic(GeneratorConfig(n=8000, k=10, seed=3))
    col = {int(l): j for j, l in enumerate(gt.location_ids)}
    lcol = np.array([col[r.landing] for r in ds.records])
    chosen = gt.v[np.arange(len(ds)), lcol]
    assert abs(chosen.mean()) / V_SD < 0.05


def test_constant_v_zeroes_v():
    _, gt = generate_synthetic(GeneratorConfig(n=50, k=4, seed=1, constant_v=True))
    assert np.array_equal(gt.v, np.zeros_like(gt.v))


def test_within_cell_sd_bound_holds(small_world):
    dataset, truth = small_world
    bands = dataset.column("age_band")
    edu = dataset.column("education")
    for b in set(bands.tolist()):
        for e in set(edu.tolist()):
            sel = (bands == b) & (edu == e)
            if sel.sum() > 30:
                assert truth.potential_outcomes[sel].std(axis=0).max() < WITHIN_CELL_SD_BOUND


def test_noise_floor_shrinks_with_cells():
    assert bias_noise_floor(800, 800) < bias_noise_floor(200, 200)
    assert bias_noise_floor(200, 10_000) < bias_noise_floor(200, 200)


def test_ground_truth_json_round_trip(tmp_path, small_world):
    _, truth = small_world
    path = tmp_path / "gt.json"
    save_ground_truth(truth, path)
    back = load_ground_truth(path)
    assert isinstance(back, SyntheticGroundTruth)
    assert np.array_equal(back.ids, truth.ids)
    assert np.array_equal(back.potential_outcomes, truth.potential_outcomes)
    assert np.array_equal(back.u, truth.u)
    assert np.array_equal(back.v, truth.v)
    assert np.array_equal(back.noise, truth.noise)


def test_spouse_outcomes_only_for_couples(small_world):
    dataset, _ = small_world
    for rec in dataset.records:
        if rec.case_size == 1:
            assert rec.spouse_outcome is None
        else:
            assert rec.spouse_outcome is not None and rec.spouse_outcome >= 0
