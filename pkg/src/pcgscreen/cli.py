"""Command-line front end.

Every subcommand shares ``--config``, ``--out-dir`` and one flag per
RunConfig field (``--seed``, ``--duration``, ``--rmssd-threshold`` ...).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .core import PcgError, RunConfig
from .features import read_feature_file, read_feature_index, write_feature_file, write_feature_index
from .model import load_checkpoint, save_checkpoint, train
from .pipeline import prepare_corpus, run_experiment, score, split_records
from .preprocess import FilterSpec, bandpass_filter, remove_spikes
from .quality import write_quality_csv
from .synth import generate_corpus
from .wavio import read_manifest, write_wav

log = logging.getLogger("pcgscreen")

SWEEP_THRESHOLDS = tuple(round(0.2 + 0.1 * i, 1) for i in range(9))
GRID_COLUMNS = ("rmssd", "zcr", "fraction_suitable", "n_suitable", "accuracy")


# --- sweep -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    rmssd: float
    zcr: float
    fraction_suitable: float
    n_suitable: int
    accuracy: float | None


@dataclass
class SweepGrid:
    cells: list[SweepCell]

    def cell(self, rmssd: float, zcr: float) -> SweepCell:
        for c in self.cells:
            if abs(c.rmssd - rmssd) < 1e-9 and abs(c.zcr - zcr) < 1e-9:
                return c
        raise KeyError((rmssd, zcr))

    def matrix(self, attr: str) -> np.ndarray:
        m = np.full((len(SWEEP_THRESHOLDS), len(SWEEP_THRESHOLDS)), np.nan)
        for c in self.cells:
            v = getattr(c, attr)
            m[SWEEP_THRESHOLDS.index(c.rmssd), SWEEP_THRESHOLDS.index(c.zcr)] = np.nan if v is None else v
        return m

    def write(self, out_dir: Path) -> None:
        with open(out_dir / "sweep_grid.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GRID_COLUMNS)
            for c in self.cells:
                w.writerow([c.rmssd, c.zcr, repr(c.fraction_suitable), c.n_suitable,
                            "" if c.accuracy is None else repr(c.accuracy)])
        # wide matrices: rows are RMSSD thresholds, columns ZCR thresholds
        for attr in ("fraction_suitable", "accuracy"):
            with open(out_dir / f"sweep_{attr}_matrix.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["rmssd\\zcr", *SWEEP_THRESHOLDS])
                for r, row in zip(SWEEP_THRESHOLDS, self.matrix(attr)):
                    w.writerow([r, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def read_sweep_grid(path: str | Path) -> SweepGrid:
    with open(path, newline="") as fh:
        return SweepGrid([SweepCell(float(r["rmssd"]), float(r["zcr"]), float(r["fraction_suitable"]),
                                    int(r["n_suitable"]), float(r["accuracy"]) if r["accuracy"] else None)
                          for r in csv.DictReader(fh)])


def cmd_sweep(corpus: str | Path, duration_class, cfg: RunConfig, checkpoint: str | Path | None = None,
              train_per_cell: bool = False, out_dir: str | Path | None = None) -> SweepGrid:
    """Gate the corpus at every RMSSD x ZCR threshold pair and score each cell.

    With a checkpoint, its predictions on the test-split segments are
    reused across cells; with ``train_per_cell`` a model is trained from
    scratch on the cell's suitable train/val segments.  Cells with fewer
    than ``cfg.min_cell_segments`` suitable test segments get no accuracy.
    """
    if checkpoint is None and not train_per_cell:
        raise PcgError("sweep needs --checkpoint or --train-per-cell")
    cfg = cfg.replace(duration=duration_class)
    records = prepare_corpus(corpus, cfg, featurize_all=True)
    splits = split_records(records, cfg)
    test = [r for r in records if r.patient_id in splits["test"]]
    correct = {}
    if checkpoint is not None and not train_per_cell:
        model = load_checkpoint(checkpoint)
        probs, _ = score(model, test)
        correct = {r.segment_id: int(p.argmax() == r.target) for r, p in zip(test, probs)}

    cells = []
    for rt in SWEEP_THRESHOLDS:
        for zt in SWEEP_THRESHOLDS:
            suitable = [r for r in records if r.quality.passes(rt, zt)]
            cell_test = [r for r in test if r.quality.passes(rt, zt)]
            acc = None
            if len(cell_test) >= cfg.min_cell_segments:
                if train_per_cell:
                    try:
                        result = run_experiment(records, cfg.replace(rmssd_threshold=rt, zcr_threshold=zt),
                                                splits=splits)
                        acc = result.metrics.accuracy
                    except PcgError as exc:
                        log.warning("cell (%.1f, %.1f) not trainable: %s", rt, zt, exc)
                else:
                    acc = float(np.mean([correct[r.segment_id] for r in cell_test]))
            cells.append(SweepCell(rt, zt, len(suitable) / len(records), len(suitable), acc))
    grid = SweepGrid(cells)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        grid.write(out)
    return grid


# --- helpers -----------------------------------------------------------------

def _write_splits(path: Path, splits: dict[str, set[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "split"])
        for name in ev.SPLITS:
            for pid in sorted(splits[name]):
                w.writerow([pid, name])


def _read_splits(path: Path) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {s: set() for s in ev.SPLITS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["split"]].add(row["patient_id"])
    return out


def _load_feature_set(features_dir: Path, patients: set[str] | None = None):
    rows = read_feature_index(features_dir / "index.csv")
    if patients is not None:
        rows = [r for r in rows if r["patient_id"] in patients]
    x = np.stack([read_feature_file(features_dir / r["path"]) for r in rows]) if rows else None
    y = np.array([1 if r["label"] == "CHD" else 0 for r in rows], dtype=int)
    return rows, x, y


# --- subcommands -------------------------------------------------------------

def run_gen(args, cfg, out: Path) -> None:
    rows = generate_corpus(out, args.n_patients, args.chd_fraction, cfg.seed, args.recording_seconds,
                           args.snr, args.noisy_fraction)
    log.info("wrote %d recordings to %s", len(rows), out)


def run_assess(args, cfg, out: Path) -> None:
    records = prepare_corpus(args.corpus, cfg)
    write_quality_csv(out / "quality.csv", [(r.segment, r.quality) for r in records])
    log.info("%d of %d segments suitable", sum(r.quality.suitable for r in records), len(records))


def run_preprocess(args, cfg, out: Path) -> None:
    spec = FilterSpec.from_config(cfg)
    dump = out / "preprocessed"
    records = prepare_corpus(args.corpus, cfg)
    for r in records:
        if not r.quality.suitable:
            continue
        post = remove_spikes(bandpass_filter(r.segment, spec))
        write_wav(dump / f"{r.segment_id}_pre.wav", r.segment.samples, r.segment.sample_rate, bits=32)
        write_wav(dump / f"{r.segment_id}_post.wav", post.samples, post.sample_rate, bits=32)
    write_quality_csv(out / "quality.csv", [(r.segment, r.quality) for r in records])


def run_features(args, cfg, out: Path) -> None:
    records = prepare_corpus(args.corpus, cfg, featurize_all=args.all)
    fdir = out / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    index = []
    for r in records:
        if r.features is None:
            continue
        rel = f"{r.segment_id}.pcgf"
        write_feature_file(fdir / rel, r.features)
        index.append((r.segment_id, r.patient_id, r.segment.label.value, rel))
    write_feature_index(fdir / "index.csv", index)
    write_quality_csv(out / "quality.csv", [(r.segment, r.quality) for r in records])
    _write_splits(out / "splits.csv", split_records(records, cfg))
    log.info("wrote %d feature matrices", len(index))


def run_train(args, cfg, out: Path) -> None:
    fdir = Path(args.features)
    splits = _read_splits(Path(args.splits) if args.splits else fdir.parent / "splits.csv")
    _, tx, ty = _load_feature_set(fdir, splits["train"])
    _, vx, vy = _load_feature_set(fdir, splits["val"])
    if tx is None:
        raise PcgError("no training segments in the feature index")
    if vx is None:
        vx, vy = np.empty((0,) + tx.shape[1:]), np.empty(0, dtype=int)
    result = train(tx, ty, vx, vy, cfg, log_path=out / "training_log.csv")
    save_checkpoint(out / "model.pcgm", result.model)
    cfg.dump(out / "config.ini")
    log.info("best epoch %d, checksum %s", result.best_epoch, result.model.checksum()[:16])


def run_predict(args, cfg, out: Path) -> None:
    fdir = Path(args.features)
    patients = None
    if args.split != "all":
        splits = _read_splits(Path(args.splits) if args.splits else fdir.parent / "splits.csv")
        patients = splits[args.split]
    rows, x, y = _load_feature_set(fdir, patients)
    if x is None:
        raise ev.EmptyEvaluation("no segments to predict")
    model = load_checkpoint(args.checkpoint)
    probs = model.predict_proba(x)
    ev.write_predictions(out / "predictions.csv",
                         [(r["segment_id"], r["patient_id"], t, p.argmax(), p[1])
                          for r, t, p in zip(rows, y, probs)])


def run_eval(args, cfg, out: Path) -> None:
    preds = ev.read_predictions(args.predictions)
    labels = [p["label"] for p in preds]
    guesses = [p["pred"] for p in preds]
    overall = ev.compute_metrics(ev.ConfusionCounts.from_predictions(labels, guesses))
    groups = {}
    if args.corpus:
        meta = {}
        for row in read_manifest(args.corpus):
            meta[row.patient_id] = {"age_years": row.age_years, "sex": row.sex}
        try:
            per = [meta[p["patient_id"]] for p in preds]
        except KeyError as exc:
            raise ev.MissingMetadata(f"patient {exc} not in manifest") from exc
        for key in ("age_band", "sex"):
            groups[key] = ev.grouped_metrics(labels, guesses, per, key)
    patient = ev.compute_metrics(ev.patient_majority([p["patient_id"] for p in preds], labels, guesses))
    ev.write_metrics_json(out / "metrics.json", overall, groups, patient)
    print(json.dumps(overall.to_dict()))


def run_sweep(args, cfg, out: Path) -> None:
    cmd_sweep(args.corpus, cfg.duration, cfg, args.checkpoint, args.train_per_cell, out)


def run_activations(args, cfg, out: Path) -> None:
    rows, x, _ = _load_feature_set(Path(args.features))
    if x is None:
        raise ev.EmptyEvaluation("no segments in the feature index")
    model = load_checkpoint(args.checkpoint)
    acts = model.activations(x)
    arrays = {f"transformer_{i + 1}": a for i, a in enumerate(acts[:-1])}
    arrays["global_pool"] = acts[-1]
    arrays["segment_id"] = np.array([r["segment_id"] for r in rows])
    arrays["label"] = np.array([r["label"] for r in rows])
    np.savez(out / "activations.npz", **arrays)


COMMANDS = {
    "gen": run_gen, "assess": run_assess, "preprocess": run_preprocess, "features": run_features,
    "train": run_train, "predict": run_predict, "eval": run_eval, "sweep": run_sweep,
    "activations": run_activations,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (sections as written by `train`)")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, kind in RunConfig.field_types().items():
        flag = "--" + name.replace("_", "-")
        if name == "duration":
            common.add_argument(flag, dest=name, choices=["15s", "5s", "3s"])
        else:
            common.add_argument(flag, dest=name, type=kind if kind in (int, float) else str)

    parser = argparse.ArgumentParser(prog="pcgscreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n-patients", type=int, default=100)
    p.add_argument("--chd-fraction", type=float, default=0.63)
    p.add_argument("--snr", type=float, default=25.0)
    p.add_argument("--noisy-fraction", type=float, default=0.0)
    p.add_argument("--recording-seconds", type=float, default=15.0)

    p = sub.add_parser("assess", parents=[common], help="quality indicators per segment")
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="dump pre/post filtered segments")
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("features", parents=[common], help="write feature matrices and splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--all", action="store_true", help="also featurise segments failing the gate")

    p = sub.add_parser("train", parents=[common], help="train on a feature directory")
    p.add_argument("--features", required=True)
    p.add_argument("--splits")

    p = sub.add_parser("predict", parents=[common], help="class probabilities per segment")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")

    p = sub.add_parser("eval", parents=[common], help="metrics from predictions.csv")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", help="corpus root whose manifest supplies age/sex")

    p = sub.add_parser("sweep", parents=[common], help="RMSSD x ZCR threshold grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--train-per-cell", action="store_true")

    p = sub.add_parser("activations", parents=[common], help="export transformer activations")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}
    return RunConfig.from_mapping(overrides, base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except PcgError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
