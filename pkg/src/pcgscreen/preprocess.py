"""Bandpass filtering and Schmidt spike removal."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import InvalidSpec, RunConfig, Segment, TooShort

SPIKE_WINDOW_SECONDS = 0.5
SPIKE_FACTOR = 3.0


@dataclass(frozen=True)
class FilterSpec:
    order: int = 5
    low_cut: float = 25.0
    high_cut: float = 400.0

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "FilterSpec":
        return cls(cfg.filter_order, cfg.low_cut, cfg.high_cut)

    def validate(self, sample_rate: float) -> None:
        if self.order < 1:
            raise InvalidSpec(f"filter order must be >= 1, got {self.order}")
        if not 0 < self.low_cut < self.high_cut < sample_rate / 2:
            raise InvalidSpec(
                f"need 0 < low_cut < high_cut < {sample_rate / 2} Hz, got {self.low_cut}-{self.high_cut}")


@functools.lru_cache(maxsize=32)
def butter_bandpass_sos(spec: FilterSpec, sample_rate: float) -> np.ndarray:
    """Second-order sections of the bilinear-transform Butterworth bandpass."""
    spec.validate(sample_rate)
    sos = signal.butter(spec.order, [spec.low_cut, spec.high_cut], btype="bandpass",
                        fs=sample_rate, output="sos")
    sos.setflags(write=False)
    return sos


def bandpass(x, sample_rate: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase (forward-backward) bandpass; output has the input's length."""
    sos = butter_bandpass_sos(spec, float(sample_rate))
    return signal.sosfiltfilt(sos.copy(), np.asarray(x, dtype=np.float64))


def bandpass_filter(seg: Segment, spec: FilterSpec = FilterSpec()) -> Segment:
    return seg.replace(bandpass(seg.samples, seg.sample_rate, spec))


def _window_maas(x: np.ndarray, win: int) -> np.ndarray:
    n_full = x.size // win
    maas = np.abs(x[:n_full * win]).reshape(n_full, win).max(axis=1) if n_full else np.empty(0)
    if x.size % win:
        maas = np.append(maas, np.abs(x[n_full * win:]).max())
    return maas


def _spike_bounds(x: np.ndarray, start: int, stop: int, peak: int) -> tuple[int, int]:
    # crossing sample: exactly zero, or opposite sign to the spike peak
    sign = np.sign(x[peak])
    left = x[start:peak]
    hits = np.flatnonzero((left == 0) | (np.sign(left) != sign))
    lo = start + hits[-1] if hits.size else start
    right = x[peak + 1:stop]
    hits = np.flatnonzero((right == 0) | (np.sign(right) != sign))
    hi = peak + 1 + hits[0] if hits.size else stop - 1
    return lo, hi


def remove_spikes_array(x, sample_rate: float) -> np.ndarray:
    """Iterative Schmidt spike removal on a plain sample array.

    While some 500 ms window's maximum absolute amplitude exceeds three
    times the median over all windows, the lobe around the peak of the
    loudest window is zeroed between the enclosing zero crossings.
    """
    x = np.array(x, dtype=np.float64)
    win = int(round(SPIKE_WINDOW_SECONDS * sample_rate))
    if x.size < win:
        raise TooShort(f"spike removal needs at least {win} samples, got {x.size}")
    while True:
        maas = _window_maas(x, win)
        if not maas.max() > SPIKE_FACTOR * np.median(maas):
            return x
        w = int(np.argmax(maas))
        start, stop = w * win, min((w + 1) * win, x.size)
        peak = start + int(np.argmax(np.abs(x[start:stop])))
        lo, hi = _spike_bounds(x, start, stop, peak)
        x[lo:hi + 1] = 0.0


def remove_spikes(seg: Segment) -> Segment:
    return seg.replace(remove_spikes_array(seg.samples, seg.sample_rate))


def preprocess_segment(seg: Segment, spec: FilterSpec = FilterSpec()) -> Segment:
    """Bandpass then spike removal, the order used after the quality gate."""
    return remove_spikes(bandpass_filter(seg, spec))
