import csv
import json

import numpy as np
import pytest

from pcgscreen.cli import GRID_COLUMNS, SWEEP_THRESHOLDS, main, read_sweep_grid
from pcgscreen.core import RunConfig
from pcgscreen.evaluation import read_predictions
from pcgscreen.features import read_feature_file, read_feature_index
from pcgscreen.model import load_checkpoint

FAST = ["--epochs", "3", "--patience", "3", "--seed", "1", "--duration", "5s"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert run("gen", "--out-dir", corpus, "--n-patients", 24, "--recording-seconds", 10, "--seed", 3,
               "--noisy-fraction", 0.1) == 0
    assert run("features", "--corpus", corpus, "--out-dir", root / "feat", *FAST) == 0
    assert run("train", "--features", root / "feat" / "features", "--out-dir", root / "train", *FAST) == 0
    assert run("predict", "--features", root / "feat" / "features", "--checkpoint", root / "train" / "model.pcgm",
               "--split", "all", "--out-dir", root / "pred") == 0
    return root


def test_gen_layout(workspace):
    assert len(list((workspace / "corpus").rglob("*.wav"))) == 96
    assert (workspace / "corpus" / "manifest.csv").exists()


def test_features_outputs(workspace):
    feat = workspace / "feat"
    index = read_feature_index(feat / "features" / "index.csv")
    assert index and all(read_feature_file(feat / "features" / r["path"]).shape == (39, 51) for r in index[:5])
    quality_rows = list(csv.DictReader(open(feat / "quality.csv")))
    # 96 ten-second recordings give two 5 s segments each
    assert len(quality_rows) == 192
    assert len(index) == sum(r["suitable"] in ("1", "True", "true") for r in quality_rows)
    splits = list(csv.DictReader(open(feat / "splits.csv")))
    assert len(splits) == 24 and {r["split"] for r in splits} == {"train", "val", "test"}


def test_train_outputs(workspace):
    out = workspace / "train"
    log = list(csv.reader(open(out / "training_log.csv")))
    assert len(log) == 4
    cfg = RunConfig.load(out / "config.ini")
    assert cfg.epochs == 3 and cfg.seed == 1


def test_predict_matches_forward_bit_exactly(workspace):
    rows = read_predictions(workspace / "pred" / "predictions.csv")
    index = read_feature_index(workspace / "feat" / "features" / "index.csv")
    assert [r["segment_id"] for r in rows] == [r["segment_id"] for r in index]
    x = np.stack([read_feature_file(workspace / "feat" / "features" / r["path"]) for r in index])
    probs = load_checkpoint(workspace / "train" / "model.pcgm").predict_proba(x)
    assert [r["prob_chd"] for r in rows] == probs[:, 1].tolist()
    assert [r["pred"] for r in rows] == probs.argmax(1).tolist()


def test_eval_writes_grouped_metrics(workspace, capsys):
    out = workspace / "eval"
    assert run("eval", "--predictions", workspace / "pred" / "predictions.csv", "--corpus", workspace / "corpus",
               "--out-dir", out) == 0
    doc = json.loads((out / "metrics.json").read_text())
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["accuracy"] == doc["global"]["accuracy"]
    assert set(doc["groups"]) == {"age_band", "sex"}
    n = len(read_predictions(workspace / "pred" / "predictions.csv"))
    assert sum(sum(g["counts"].values()) for g in doc["groups"]["sex"]) == n


def test_sweep_with_checkpoint(workspace):
    out = workspace / "sweep"
    assert run("sweep", "--corpus", workspace / "corpus", "--checkpoint", workspace / "train" / "model.pcgm",
               "--out-dir", out, *FAST) == 0
    with open(out / "sweep_grid.csv") as fh:
        assert tuple(next(csv.reader(fh))) == GRID_COLUMNS
    grid = read_sweep_grid(out / "sweep_grid.csv")
    frac = grid.matrix("fraction_suitable")
    assert frac.shape == (9, 9) and len(SWEEP_THRESHOLDS) == 9
    assert np.all(np.diff(frac, axis=0) >= 0) and np.all(np.diff(frac, axis=1) >= 0)
    assert (out / "sweep_accuracy_matrix.csv").exists()


def test_activations_export(workspace):
    out = workspace / "acts"
    assert run("activations", "--features", workspace / "feat" / "features", "--checkpoint",
               workspace / "train" / "model.pcgm", "--out-dir", out) == 0
    data = np.load(out / "activations.npz")
    n = data["segment_id"].size
    assert [data[f"transformer_{i}"].shape for i in range(1, 6)] == [(n, t, 32) for t in (51, 25, 12, 6, 6)]
    assert data["global_pool"].shape == (n, 32)


def test_assess_and_preprocess(workspace):
    assert run("assess", "--corpus", workspace / "corpus", "--out-dir", workspace / "assess", *FAST) == 0
    assert (workspace / "assess" / "quality.csv").read_bytes() == (workspace / "feat" / "quality.csv").read_bytes()
    assert run("preprocess", "--corpus", workspace / "corpus", "--out-dir", workspace / "pre", *FAST) == 0
    assert len(list((workspace / "pre" / "preprocessed").glob("*_post.wav"))) > 0


def test_outputs_are_deterministic(workspace, tmp_path):
    assert run("features", "--corpus", workspace / "corpus", "--out-dir", tmp_path / "feat", *FAST) == 0
    assert run("train", "--features", tmp_path / "feat" / "features", "--out-dir", tmp_path / "train", *FAST) == 0
    for rel in ("feat/quality.csv", "feat/splits.csv", "feat/features/index.csv", "train/model.pcgm",
                "train/training_log.csv"):
        assert (tmp_path / rel).read_bytes() == (workspace / rel).read_bytes(), rel


def test_config_file_and_flag_precedence(workspace, tmp_path):
    RunConfig(epochs=2, patience=2, seed=1, duration=RunConfig().duration).dump(tmp_path / "run.ini")
    assert run("train", "--features", workspace / "feat" / "features", "--config", tmp_path / "run.ini",
               "--epochs", 1, "--out-dir", tmp_path / "t") == 0
    cfg = RunConfig.load(tmp_path / "t" / "config.ini")
    assert cfg.epochs == 1 and cfg.patience == 2
    assert len(list(csv.reader(open(tmp_path / "t" / "training_log.csv")))) == 2


def test_error_exit_codes(workspace, tmp_path, capsys):
    assert run("assess", "--corpus", tmp_path / "missing", "--out-dir", tmp_path) == 3
    assert run("assess", "--corpus", workspace / "corpus", "--rmssd-threshold", -1, "--out-dir", tmp_path) == 2
    assert "error [" in capsys.readouterr().err
    # sweep without a model source is a categorized usage error
    assert run("sweep", "--corpus", workspace / "corpus", "--out-dir", tmp_path) == 2
    (tmp_path / "junk.pcgm").write_bytes(b"not a model")
    assert run("predict", "--features", workspace / "feat" / "features", "--checkpoint", tmp_path / "junk.pcgm",
               "--split", "all", "--out-dir", tmp_path) == 2
    with pytest.raises(SystemExit):
        main(["nonsense"])
