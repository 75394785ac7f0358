"""End-to-end orchestration: gate, preprocess, featurise, split, train, score."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import PcgRecording, RunConfig, Segment, split_recording
from .evaluation import (ConfusionCounts, MetricsReport, compute_metrics, patient_wise_split)
from .features import FrameParams, extract_features
from .model import Network, TrainResult, train
from .preprocess import FilterSpec, preprocess_segment
from .quality import QualityReport, assess_quality
from .wavio import load_corpus

log = logging.getLogger(__name__)


@dataclass
class SegmentRecord:
    segment: Segment
    quality: QualityReport
    features: np.ndarray | None = None
    age_years: float | None = None
    sex: str | None = None

    @property
    def segment_id(self) -> str:
        return self.segment.parent_id

    @property
    def patient_id(self) -> str:
        return self.segment.patient_id

    @property
    def target(self) -> int:
        return self.segment.label.target

    @property
    def meta(self) -> dict:
        return {"age_years": self.age_years, "sex": self.sex}


def featurize(seg: Segment, cfg: RunConfig, params: FrameParams = FrameParams()) -> np.ndarray:
    return extract_features(preprocess_segment(seg, FilterSpec.from_config(cfg)), params)


def prepare_records(recordings: Sequence[PcgRecording], cfg: RunConfig,
                    featurize_all: bool = False) -> list[SegmentRecord]:
    """Split, quality-assess and featurise every segment.

    Features are computed only for segments passing the gate unless
    ``featurize_all`` is set (threshold sweeps need every segment).
    """
    records = []
    for rec in recordings:
        for seg in split_recording(rec, cfg.duration):
            report = assess_quality(seg, cfg)
            feats = featurize(seg, cfg) if (report.suitable or featurize_all) else None
            records.append(SegmentRecord(seg, report, feats, rec.age_years, rec.sex))
    return records


def prepare_corpus(root: str | Path, cfg: RunConfig, featurize_all: bool = False) -> list[SegmentRecord]:
    return prepare_records(load_corpus(root), cfg, featurize_all)


def split_records(records: Sequence[SegmentRecord], cfg: RunConfig) -> dict[str, set[str]]:
    counts: dict[str, list] = {}
    for r in records:
        entry = counts.setdefault(r.patient_id, [r.patient_id, r.segment.label, 0])
        entry[2] += 1
    return patient_wise_split([tuple(v) for v in counts.values()], cfg.test_fraction,
                              cfg.val_fraction, cfg.seed)


def stack(records: Sequence[SegmentRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        return np.empty((0, 39, 0)), np.empty(0, dtype=int)
    return (np.stack([r.features for r in records]),
            np.array([r.target for r in records], dtype=int))


@dataclass
class ExperimentResult:
    training: TrainResult
    splits: dict[str, set[str]]
    test_records: list[SegmentRecord]
    test_probs: np.ndarray
    metrics: MetricsReport

    @property
    def model(self) -> Network:
        return self.training.model

    @property
    def test_accuracy(self) -> float:
        return self.metrics.accuracy


def score(model: Network, records: Sequence[SegmentRecord]) -> tuple[np.ndarray, ConfusionCounts]:
    x, y = stack(records)
    probs = model.predict_proba(x)
    return probs, ConfusionCounts.from_predictions(y, probs.argmax(axis=1))


def run_experiment(records: Sequence[SegmentRecord], cfg: RunConfig,
                   splits: dict[str, set[str]] | None = None,
                   log_path: str | Path | None = None) -> ExperimentResult:
    """Train on gated train/val segments and score the gated test split."""
    splits = splits or split_records(records, cfg)
    usable = [r for r in records
              if r.quality.passes(cfg.rmssd_threshold, cfg.zcr_threshold) and r.features is not None]
    part = {s: [r for r in usable if r.patient_id in splits[s]] for s in splits}
    tx, ty = stack(part["train"])
    vx, vy = stack(part["val"])
    log.info("training on %d segments, validating on %d, testing on %d",
             ty.size, vy.size, len(part["test"]))
    result = train(tx, ty, vx, vy, cfg, log_path=log_path)
    probs, counts = score(result.model, part["test"])
    return ExperimentResult(result, splits, part["test"], probs, compute_metrics(counts))
