"""MFCC, delta and delta-delta features (39 x T per segment)."""
from __future__ import annotations

import csv
import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SAMPLE_RATE, CorruptHeader, Segment, TooShort

LOG_FLOOR = 1e-10
FEATURE_MAGIC = b"PCGF"


@dataclass(frozen=True)
class FrameParams:
    frame_len: int = 768  # 192 ms at 4 kHz
    hop: int = 384
    hamming_alpha: float = 0.46
    pre_emphasis_alpha: float = 0.97
    n_mels: int = 26
    n_mfcc: int = 13
    delta_window: int = 2
    fft_size: int = 1024

    def __post_init__(self):
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be half the frame length")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc cannot exceed n_mels")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must cover the frame")

    @property
    def n_features(self) -> int:
        return 3 * self.n_mfcc

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_len) // self.hop + 1


def pre_emphasize(x, alpha: float = 0.97) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    out[1:] -= alpha * x[:-1]
    return out


def hamming(n: int, alpha: float = 0.46) -> np.ndarray:
    return (1 - alpha) - alpha * np.cos(2 * np.pi * np.arange(n) / (n - 1))


def frame_and_window(x, params: FrameParams = FrameParams()) -> np.ndarray:
    """Frames of shape (T, frame_len); incomplete tail frames are dropped."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < params.frame_len:
        raise TooShort(f"need at least {params.frame_len} samples, got {x.size}")
    starts = np.arange(params.n_frames(x.size)) * params.hop
    frames = x[starts[:, None] + np.arange(params.frame_len)]
    return frames * hamming(params.frame_len, params.hamming_alpha)


def power_spectrum(frames, fft_size: int = 1024) -> np.ndarray:
    """One-sided ``|X(k)|**2 / fft_size`` for k = 0..fft_size/2 (frames zero-padded)."""
    spec = np.fft.rfft(np.asarray(frames, dtype=np.float64), n=fft_size, axis=-1)
    return (spec.real ** 2 + spec.imag ** 2) / fft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filter_edges(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """The ``n_mels + 2`` triangle vertices on the (fractional) FFT bin axis."""
    mels = np.linspace(0.0, float(hz_to_mel(sample_rate / 2)), n_mels + 2)
    return mel_to_hz(mels) * fft_size / sample_rate


@functools.lru_cache(maxsize=8)
def _cached_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    if n_mels < 2:
        raise ValueError("need at least two mel filters")
    edges = filter_edges(n_mels, fft_size, sample_rate)
    k = np.arange(fft_size // 2 + 1, dtype=np.float64)
    bank = np.zeros((n_mels, k.size))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (k - left) / (center - left)
        falling = (right - k) / (right - center)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    bank.setflags(write=False)
    return bank


def mel_filterbank(params: FrameParams = FrameParams(), sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters, shape (n_mels, fft_size/2 + 1)."""
    return _cached_filterbank(params.n_mels, params.fft_size, int(sample_rate))


def log_mel(spectrum, filterbank) -> np.ndarray:
    energies = np.asarray(spectrum) @ np.asarray(filterbank).T
    return np.log(np.maximum(energies, LOG_FLOOR))


@functools.lru_cache(maxsize=8)
def _dct_basis(n_mels: int, n_mfcc: int) -> np.ndarray:
    n = np.arange(1, n_mfcc + 1)[:, None]
    m = np.arange(n_mels)[None, :]
    return np.cos(np.pi * n * (m + 0.5) / n_mels)


def dct_mfcc(log_energies, n_mfcc: int = 13) -> np.ndarray:
    """Unnormalised DCT-II, coefficients 1..n_mfcc (DC term excluded)."""
    e = np.asarray(log_energies, dtype=np.float64)
    return e @ _dct_basis(e.shape[-1], n_mfcc).T


def delta(frames, window: int = 2) -> np.ndarray:
    """Regression deltas along axis 0 with edge replication."""
    c = np.asarray(frames, dtype=np.float64)
    t = c.shape[0]
    if t < 2 * window + 1:
        raise TooShort(f"delta with window {window} needs {2 * window + 1} frames, got {t}")
    padded = np.concatenate([np.repeat(c[:1], window, axis=0), c, np.repeat(c[-1:], window, axis=0)])
    out = np.zeros_like(c)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + t] - padded[window - n:window - n + t])
    return out / (2 * sum(n * n for n in range(1, window + 1)))


def delta_features(mfcc_frames, window: int = 2) -> tuple[np.ndarray, np.ndarray]:
    d1 = delta(mfcc_frames, window)
    return d1, delta(d1, window)


def mfcc_frames(x, params: FrameParams = FrameParams(), sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """MFCC per frame, shape (T, n_mfcc)."""
    frames = frame_and_window(pre_emphasize(x, params.pre_emphasis_alpha), params)
    spec = power_spectrum(frames, params.fft_size)
    return dct_mfcc(log_mel(spec, mel_filterbank(params, sample_rate)), params.n_mfcc)


def extract_features_array(x, params: FrameParams = FrameParams(),
                           sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Feature matrix of shape (39, T): MFCC rows, then deltas, then delta-deltas."""
    c = mfcc_frames(x, params, sample_rate)
    d1, d2 = delta_features(c, params.delta_window)
    return np.concatenate([c, d1, d2], axis=1).T


def extract_features(seg: Segment, params: FrameParams = FrameParams()) -> np.ndarray:
    return extract_features_array(seg.samples, params, seg.sample_rate)


# --- feature files ----------------------------------------------------------

def write_feature_file(path: str | Path, matrix) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    rows, cols = m.shape
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<II", rows, cols) + m.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise CorruptHeader(f"{path} is not a feature file")
    rows, cols = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * rows * cols:
        raise CorruptHeader(f"{path}: payload does not match {rows}x{cols}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)


INDEX_COLUMNS = ("segment_id", "patient_id", "label", "path")


def write_feature_index(path: str | Path, rows) -> None:
    """``rows`` are (segment_id, patient_id, label, relative feature path) tuples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_COLUMNS)
        writer.writerows(rows)


def read_feature_index(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
