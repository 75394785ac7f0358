"""Patient-wise stratified splitting and classification metrics."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import EmptyEvaluation, Label, MissingMetadata, TooFewPatients, make_rng

SPLITS = ("train", "val", "test")
AGE_BANDS = ((0.0, 1.0, "0-1"), (1.0, 5.0, "1-5"), (5.0, 10.0, "5-10"), (10.0, math.inf, ">10"))


def patient_wise_split(patients: Sequence[tuple[str, Label, int]], test_fraction: float = 0.05,
                       val_fraction: float = 0.05, seed: int = 0) -> dict[str, set[str]]:
    """Assign whole patients to train/val/test, stratified by label.

    ``patients`` holds ``(patient_id, label, n_segments)``.  ``test_fraction``
    of the corpus goes to test, then ``val_fraction`` of the remainder to
    validation.  Within each label the shuffled patients are dealt greedily
    to whichever split is furthest below its segment-count target.
    """
    by_label: dict[Label, list[tuple[str, int]]] = defaultdict(list)
    seen = {}
    for pid, label, count in patients:
        if pid in seen and seen[pid] != label:
            raise ValueError(f"patient {pid} carries more than one label")
        if pid not in seen:
            seen[pid] = label
            by_label[label].append((pid, count))
    agg: dict[str, int] = Counter()
    for pid, _, count in patients:
        agg[pid] += count

    shares = {"test": test_fraction, "val": (1 - test_fraction) * val_fraction}
    shares["train"] = 1.0 - shares["test"] - shares["val"]
    out: dict[str, set[str]] = {s: set() for s in SPLITS}
    for li, label in enumerate(sorted(by_label, key=lambda lb: lb.value)):
        members = sorted(by_label[label])
        rng = make_rng(seed, 7, li)
        order = rng.permutation(len(members))
        total = sum(agg[pid] for pid, _ in members)
        deficit = {s: shares[s] * total for s in SPLITS}
        for i in order:
            pid = members[i][0]
            # ties go to the smaller split so test/val are never starved
            target = max(("test", "val", "train"), key=lambda s: (not out[s] and shares[s] > 0, deficit[s]))
            out[target].add(pid)
            deficit[target] -= agg[pid]
    empty = [s for s in SPLITS if not out[s]]
    if empty:
        raise TooFewPatients(f"split(s) {empty} would be empty with {len(seen)} patients")
    return out


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, labels: Iterable[int], preds: Iterable[int]) -> "ConfusionCounts":
        y = np.asarray(list(labels), dtype=int)
        p = np.asarray(list(preds), dtype=int)
        return cls(tp=int(np.sum((y == 1) & (p == 1))), tn=int(np.sum((y == 0) & (p == 0))),
                   fp=int(np.sum((y == 0) & (p == 1))), fn=int(np.sum((y == 1) & (p == 0))))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    counts: ConfusionCounts
    group: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(counts: ConfusionCounts, group: str | None = None) -> MetricsReport:
    """The five metrics; ratios with a zero denominator are ``None``."""
    if counts.total <= 0:
        raise EmptyEvaluation("no evaluated segments")
    sens = _ratio(counts.tp, counts.tp + counts.fn)
    prec = _ratio(counts.tp, counts.tp + counts.fp)
    f1 = None
    if sens is not None and prec is not None and prec + sens > 0:
        f1 = 2 * prec * sens / (prec + sens)
    return MetricsReport(
        accuracy=(counts.tp + counts.tn) / counts.total,
        sensitivity=sens,
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
        precision=prec,
        f1=f1,
        counts=counts,
        group=group,
    )


def age_band(age: float | None) -> str:
    if age is None or not math.isfinite(age):
        raise MissingMetadata("age missing")
    for lo, hi, name in AGE_BANDS:
        if lo <= age < hi:
            return name
    raise MissingMetadata(f"negative age {age}")


def group_key(meta: dict, group_by: str) -> str:
    if group_by == "age_band":
        return age_band(meta.get("age_years"))
    if group_by == "sex":
        sex = meta.get("sex")
        if not sex:
            raise MissingMetadata("sex missing")
        return str(sex).upper()
    if group_by == "all":
        return "all"
    raise ValueError(f"unknown grouping {group_by!r}")


def grouped_metrics(labels, preds, metadata: Sequence[dict], group_by: str) -> list[MetricsReport]:
    """One report per group; ``metadata[i]`` describes prediction ``i``."""
    labels, preds = list(labels), list(preds)
    if len(metadata) != len(labels):
        raise MissingMetadata("metadata does not cover every prediction")
    buckets: dict[str, ConfusionCounts] = {}
    for y, p, meta in zip(labels, preds, metadata):
        key = group_key(meta, group_by)
        buckets[key] = buckets.get(key, ConfusionCounts()) + ConfusionCounts.from_predictions([y], [p])
    order = [name for _, _, name in AGE_BANDS] if group_by == "age_band" else sorted(buckets)
    return [compute_metrics(buckets[k], group=k) for k in order if k in buckets]


def patient_majority(patient_ids, labels, preds) -> ConfusionCounts:
    """Patient-level counts by majority vote over segments (ties count as CHD)."""
    votes: dict[str, list[int]] = defaultdict(list)
    truth: dict[str, int] = {}
    for pid, y, p in zip(patient_ids, labels, preds):
        votes[pid].append(int(p))
        truth[pid] = int(y)
    pids = sorted(votes)
    pred = [int(2 * sum(votes[k]) >= len(votes[k])) for k in pids]
    return ConfusionCounts.from_predictions([truth[k] for k in pids], pred)


PREDICTION_COLUMNS = ("segment_id", "patient_id", "label", "pred", "prob_chd")


def write_predictions(path: str | Path, rows) -> None:
    """``rows`` are (segment_id, patient_id, label, pred, prob_chd)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for sid, pid, y, p, prob in rows:
            writer.writerow([sid, pid, int(y), int(p), repr(float(prob))])


def read_predictions(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r, label=int(r["label"]), pred=int(r["pred"]), prob_chd=float(r["prob_chd"]))
                for r in csv.DictReader(fh)]


def write_metrics_json(path: str | Path, overall: MetricsReport, groups: dict[str, list[MetricsReport]],
                       patient_level: MetricsReport | None = None) -> None:
    doc = {"global": overall.to_dict(),
           "groups": {k: [r.to_dict() for r in v] for k, v in groups.items()}}
    if patient_level is not None:
        doc["patient_majority_vote"] = patient_level.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2))
