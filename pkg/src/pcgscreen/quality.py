"""Wavelet-based signal quality gate (RMSSD and zero-crossing rate)."""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DegenerateSignal, RunConfig, Segment, TooShort

LEVELS = 3


@functools.lru_cache(maxsize=None)
def daubechies_filters(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Analysis (decomposition) lowpass/highpass pair of the Daubechies wavelet.

    ``order`` is the number of vanishing moments; the filters have
    ``2 * order`` taps.  Coefficients come from the minimum-phase spectral
    factorisation of the Daubechies polynomial.
    """
    if order < 1:
        raise ValueError("wavelet order must be >= 1")
    p = order
    # P(y) = sum_k C(p-1+k, k) y^k, highest power first for np.roots
    poly_y = [math.comb(p - 1 + k, k) for k in range(p)][::-1]
    rec = np.array([1.0])
    for _ in range(p):
        rec = np.convolve(rec, [1.0, 1.0])
    if p > 1:
        for y in np.roots(poly_y):
            # z + 1/z = 2 - 4y; keep the root inside the unit circle
            b = 2.0 - 4.0 * y
            z = (b + np.sqrt(b * b - 4.0)) / 2.0
            if abs(z) > 1.0:
                z = 1.0 / z
            rec = np.convolve(rec, [1.0, -z])
    rec = np.real(rec)
    rec = rec * (math.sqrt(2.0) / rec.sum())
    lo = rec[::-1].copy()
    n = lo.size
    hi = np.array([(-1) ** (k + 1) * lo[n - 1 - k] for k in range(n)])
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


def dwt_step(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One analysis step with half-point symmetric extension.

    Output length is ``floor((len(x) + len(lo) - 1) / 2)``.
    """
    ext = np.pad(x, lo.size - 1, mode="symmetric")
    approx = np.convolve(ext, lo, mode="valid")[1::2]
    detail = np.convolve(ext, hi, mode="valid")[1::2]
    return approx, detail


@dataclass(frozen=True)
class WaveletDecomposition:
    approx3: np.ndarray
    details: tuple[np.ndarray, np.ndarray, np.ndarray]  # levels 1, 2, 3


def dwt_approx3(samples, order: int = 4) -> WaveletDecomposition:
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = daubechies_filters(order)
    if x.size < 8 * lo.size:
        raise TooShort(f"need at least {8 * lo.size} samples for a {LEVELS}-level DWT, got {x.size}")
    details = []
    for _ in range(LEVELS):
        x, d = dwt_step(x, lo, hi)
        details.append(d)
    return WaveletDecomposition(approx3=x, details=tuple(details))


def compute_rmssd(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise TooShort("RMSSD needs at least two values")
    return float(np.sqrt(np.sum(np.diff(x) ** 2) / (x.size - 1)))


def compute_zcr(x) -> float:
    """Fraction of adjacent pairs whose product is <= 0 and that differ."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise TooShort("ZCR needs at least two values")
    crossing = (x[:-1] * x[1:] <= 0) & (np.abs(np.diff(x)) > 0)
    return float(np.count_nonzero(crossing) / (x.size - 1))


def normalize_max_abs(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if not np.isfinite(peak) or peak == 0.0:
        raise DegenerateSignal("signal is all zero or non-finite")
    return x / peak


@dataclass(frozen=True)
class QualityReport:
    rmssd: float
    zcr: float
    suitable: bool
    rmssd_threshold: float
    zcr_threshold: float

    def passes(self, rmssd_threshold: float, zcr_threshold: float) -> bool:
        """Re-evaluate the gate at other thresholds (NaN indicators never pass)."""
        return bool(self.rmssd <= rmssd_threshold and self.zcr <= zcr_threshold)


def indicators(samples, order: int = 4) -> tuple[float, float]:
    """RMSSD and ZCR of the normalised level-3 approximation coefficients."""
    x = normalize_max_abs(samples)
    approx = normalize_max_abs(dwt_approx3(x, order).approx3)
    return compute_rmssd(approx), compute_zcr(approx)


def assess_quality(seg: Segment, cfg: RunConfig | None = None) -> QualityReport:
    cfg = cfg or RunConfig()
    try:
        rmssd, zcr = indicators(seg.samples, cfg.wavelet_order)
    except DegenerateSignal:
        return QualityReport(math.nan, math.nan, False, cfg.rmssd_threshold, cfg.zcr_threshold)
    suitable = rmssd <= cfg.rmssd_threshold and zcr <= cfg.zcr_threshold
    return QualityReport(rmssd, zcr, bool(suitable), cfg.rmssd_threshold, cfg.zcr_threshold)


QUALITY_COLUMNS = ("parent_id", "duration_class", "rmssd", "zcr", "suitable")


def write_quality_csv(path: str | Path, rows: list[tuple[Segment, QualityReport]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUALITY_COLUMNS)
        for seg, rep in rows:
            writer.writerow([seg.parent_id, seg.duration_class.value, repr(rep.rmssd),
                             repr(rep.zcr), int(rep.suitable)])


def read_quality_csv(path: str | Path) -> dict[str, tuple[float, float]]:
    """Map ``parent_id`` to ``(rmssd, zcr)``."""
    with open(path, newline="") as fh:
        return {r["parent_id"]: (float(r["rmssd"]), float(r["zcr"])) for r in csv.DictReader(fh)}
