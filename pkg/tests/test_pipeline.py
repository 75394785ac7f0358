import numpy as np
import pytest

from pcgscreen.cli import SWEEP_THRESHOLDS, cmd_sweep
from pcgscreen.core import DurationClass, PcgError, RunConfig
from pcgscreen.model import save_checkpoint
from pcgscreen.pipeline import prepare_corpus, run_experiment, split_records
from pcgscreen.synth import generate_corpus

CFG = RunConfig(epochs=2, patience=2, seed=0, duration=DurationClass.S5, min_cell_segments=4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    generate_corpus(root, n_patients=20, chd_fraction=0.6, seed=2, duration_s=5.0, noisy_fraction=0.2)
    return root


@pytest.fixture(scope="module")
def records(corpus):
    return prepare_corpus(corpus, CFG)


def test_features_only_for_suitable_segments(records, corpus):
    assert len(records) == 80
    assert all((r.features is not None) == r.quality.suitable for r in records)
    assert 0 < sum(r.quality.suitable for r in records) < 80
    everything = prepare_corpus(corpus, CFG, featurize_all=True)
    assert all(r.features is not None and r.features.shape == (39, 51) for r in everything)


def test_split_is_patient_disjoint(records):
    splits = split_records(records, CFG)
    assert sum(map(len, splits.values())) == 20
    for r in records:
        assert sum(r.patient_id in s for s in splits.values()) == 1


def test_experiment_scores_only_gated_test_segments(records):
    result = run_experiment(records, CFG)
    test_ids = result.splits["test"]
    expect = [r for r in records if r.patient_id in test_ids and r.quality.suitable]
    assert [r.segment_id for r in result.test_records] == [r.segment_id for r in expect]
    assert result.metrics.counts.total == len(expect) == result.test_probs.shape[0]
    np.testing.assert_allclose(result.test_probs.sum(1), 1.0, atol=1e-12)
    again = run_experiment(records, CFG)
    assert again.model.checksum() == result.model.checksum()
    assert np.array_equal(again.test_probs, result.test_probs)


def test_sweep_modes(records, corpus, tmp_path):
    with pytest.raises(PcgError):
        cmd_sweep(corpus, DurationClass.S5, CFG)
    model = run_experiment(records, CFG).model
    save_checkpoint(tmp_path / "m.pcgm", model)
    reuse = cmd_sweep(corpus, DurationClass.S5, CFG, checkpoint=tmp_path / "m.pcgm", out_dir=tmp_path)
    retrain = cmd_sweep(corpus, DurationClass.S5, CFG.replace(epochs=1), train_per_cell=True)
    for grid in (reuse, retrain):
        frac = grid.matrix("fraction_suitable")
        assert frac.shape == (9, 9)
        assert np.all(np.diff(frac, axis=0) >= 0) and np.all(np.diff(frac, axis=1) >= 0)
    np.testing.assert_array_equal(reuse.matrix("fraction_suitable"), retrain.matrix("fraction_suitable"))
    # cells are absent exactly when too few gated test segments exist
    splits = split_records(prepare_corpus(corpus, CFG), CFG)
    for rt in SWEEP_THRESHOLDS:
        for zt in SWEEP_THRESHOLDS:
            n_test = sum(r.patient_id in splits["test"] and r.quality.passes(rt, zt) for r in records)
            assert (reuse.cell(rt, zt).accuracy is None) == (n_test < CFG.min_cell_segments)
    at_default = reuse.cell(0.4, 0.4)
    assert at_default.n_suitable == sum(r.quality.suitable for r in records)
    assert (tmp_path / "sweep_grid.csv").exists()
