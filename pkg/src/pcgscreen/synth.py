"""Seeded synthetic heart-sound recordings and corpora."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .core import SAMPLE_RATE, InvalidSpec, Label, PcgRecording, Position, make_rng
from .wavio import ManifestRow, write_manifest, write_wav

POSITIONS = (Position.MV, Position.TV, Position.PV, Position.AV)


@dataclass(frozen=True)
class SynthSpec:
    heart_rate: float = 90.0  # bpm
    s1_freq: float = 50.0
    s2_freq: float = 80.0
    s1_width_ms: float = 20.0  # Gaussian envelope sigma
    s2_width_ms: float = 15.0
    s2_gain: float = 0.7
    murmur: str = "none"  # "none" or "systolic"
    murmur_band: tuple[float, float] = (150.0, 400.0)
    murmur_gain: float = 0.35
    noise_snr: float = math.inf  # dB
    spike_count: int = 0
    spike_amplitude: float = 0.95
    baseline_gain: float = 0.15  # slow respiratory wander, relative to peak
    baseline_freq: float = 0.3
    onset: float = 0.1  # time of the first S1 centre, seconds
    peak_amplitude: float = 0.3
    seed: int = 0

    def validate(self, sample_rate: int = SAMPLE_RATE) -> None:
        nyq = sample_rate / 2
        if not 60 <= self.heart_rate <= 160:
            raise InvalidSpec("heart_rate must lie in [60, 160] bpm")
        if self.murmur not in ("none", "systolic"):
            raise InvalidSpec(f"unknown murmur type {self.murmur!r}")
        freqs = (self.s1_freq, self.s2_freq, *self.murmur_band)
        if any(f <= 0 or f >= nyq for f in freqs):
            raise InvalidSpec("all synthesis frequencies must lie in (0, Nyquist)")
        if self.murmur_band[0] >= self.murmur_band[1]:
            raise InvalidSpec("murmur band must be increasing")
        if self.s2_delay >= self.period:
            raise InvalidSpec("S2 must follow S1 within the cycle")
        if not 0 < self.peak_amplitude <= 1 or not 0 < self.spike_amplitude <= 1:
            raise InvalidSpec("amplitudes must lie in (0, 1]")

    @property
    def period(self) -> float:
        return 60.0 / self.heart_rate

    @property
    def s2_delay(self) -> float:
        # systole shortens with rate, roughly with the square root of the cycle
        return 0.35 * math.sqrt(self.period)

    @property
    def label(self) -> Label:
        return Label.NON_CHD if self.murmur == "none" else Label.CHD


def _add_burst(x, sample_rate, centre, freq, sigma, gain):
    # Gaussian-enveloped tone, evaluated within +-6 sigma only
    lo = max(int((centre - 6 * sigma) * sample_rate), 0)
    hi = min(int((centre + 6 * sigma) * sample_rate) + 1, x.size)
    if hi <= lo:
        return
    u = np.arange(lo, hi) / sample_rate - centre
    x[lo:hi] += gain * np.exp(-0.5 * (u / sigma) ** 2) * np.sin(2 * np.pi * freq * u)


def generate_array(spec: SynthSpec, duration_s: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    spec.validate(sample_rate)
    if duration_s < 3:
        raise InvalidSpec("duration must be at least 3 s")
    rng = make_rng(spec.seed, 11)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    s1_sigma = spec.s1_width_ms / 1000
    s2_sigma = spec.s2_width_ms / 1000
    cycles = np.arange(spec.onset - spec.period, duration_s + spec.period, spec.period)
    jitter = rng.normal(0.0, 0.01 * spec.period, size=cycles.size)
    amp = 1.0 + rng.normal(0.0, 0.05, size=cycles.size)
    for c, j, a in zip(cycles, jitter, amp):
        s1 = c + j
        _add_burst(x, sample_rate, s1, spec.s1_freq, s1_sigma, a)
        _add_burst(x, sample_rate, s1 + spec.s2_delay, spec.s2_freq, s2_sigma, a * spec.s2_gain)

    if spec.murmur == "systolic":
        sos = signal.butter(4, spec.murmur_band, btype="bandpass", fs=sample_rate, output="sos")
        band = signal.sosfilt(sos, rng.standard_normal(n + 2000))[2000:]
        band /= band.std()
        env = np.zeros(n)
        for c, j in zip(cycles, jitter):
            lo = c + j + 2.5 * s1_sigma
            hi = c + j + spec.s2_delay - 2.5 * s2_sigma
            i0, i1 = max(int(np.ceil(lo * sample_rate)), 0), min(int(np.ceil(hi * sample_rate)), n)
            if i1 <= i0:
                continue
            env[i0:i1] = np.sin(np.pi * (t[i0:i1] - lo) / (hi - lo))
        x += spec.murmur_gain * env * band

    x *= spec.peak_amplitude / np.max(np.abs(x))
    phase = rng.uniform(0, 2 * np.pi)
    x += spec.baseline_gain * spec.peak_amplitude * np.sin(2 * np.pi * spec.baseline_freq * t + phase)

    if math.isfinite(spec.noise_snr):
        power = np.mean(x ** 2)
        x += rng.standard_normal(n) * math.sqrt(power / 10 ** (spec.noise_snr / 10))

    for _ in range(spec.spike_count):
        # short monophasic friction spike (half sine, 5 ms)
        width = int(0.005 * sample_rate)
        at = int(rng.integers(0, n - width))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        x[at:at + width] = sign * spec.spike_amplitude * np.sin(np.pi * (np.arange(width) + 0.5) / width)
    return np.clip(x, -1.0, 1.0)


def generate(spec: SynthSpec, duration_s: float = 15.0, patient_id: str = "synth",
             position: Position = Position.UNKNOWN, sample_rate: int = SAMPLE_RATE) -> PcgRecording:
    return PcgRecording(generate_array(spec, duration_s, sample_rate), sample_rate,
                        patient_id, position, spec.label)


def random_spec(rng: np.random.Generator, chd: bool, noise_snr: float, seed: int) -> SynthSpec:
    """Draw a class-consistent spec; murmur presence is the only class signal."""
    return SynthSpec(
        heart_rate=float(rng.uniform(70, 150)),
        s1_freq=float(rng.uniform(40, 70)),
        s2_freq=float(rng.uniform(60, 100)),
        s1_width_ms=float(rng.uniform(15, 25)),
        s2_width_ms=float(rng.uniform(12, 20)),
        s2_gain=float(rng.uniform(0.5, 0.9)),
        murmur="systolic" if chd else "none",
        murmur_band=(float(rng.uniform(120, 180)), float(rng.uniform(300, 450))),
        murmur_gain=float(rng.uniform(0.3, 0.5)),
        noise_snr=noise_snr,
        baseline_gain=float(rng.uniform(0.1, 0.2)),
        baseline_freq=float(rng.uniform(0.2, 0.4)),
        onset=float(rng.uniform(0.05, 0.4)),
        seed=seed,
    )


def generate_corpus(root: str | Path, n_patients: int = 100, chd_fraction: float = 0.63, seed: int = 0,
                    duration_s: float = 15.0, noise_snr: float = 25.0,
                    noisy_fraction: float = 0.0, noisy_snr: float = -10.0) -> list[ManifestRow]:
    """Write ``<root>/<patient_id>/<position>_0.wav`` for four positions per patient plus the manifest.

    A ``noisy_fraction`` of recordings is drawn at ``noisy_snr`` instead, so
    that the quality gate has something to reject.
    """
    if n_patients < 4:
        raise InvalidSpec("a corpus needs at least 4 patients")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_chd = int(round(n_patients * chd_fraction))
    chd_mask = np.zeros(n_patients, dtype=bool)
    chd_mask[make_rng(seed, 21).permutation(n_patients)[:n_chd]] = True
    rows = []
    for i in range(n_patients):
        rng = make_rng(seed, 22, i)
        pid = f"P{i:04d}"
        age = float(rng.uniform(0.4, 16.0))
        sex = "M" if rng.random() < 0.6 else "F"
        base = random_spec(rng, bool(chd_mask[i]), noise_snr, seed=0)
        for k, pos in enumerate(POSITIONS):
            # positions share the patient's heart but differ in loudness balance
            spec = dataclasses.replace(
                base, seed=int(make_rng(seed, 23, i, k).integers(2 ** 62)),
                s2_gain=float(np.clip(base.s2_gain * rng.uniform(0.8, 1.25), 0.3, 1.0)))
            if rng.random() < noisy_fraction:
                spec = dataclasses.replace(spec, noise_snr=noisy_snr)
            rel = f"{pid}/{pos.value}_0.wav"
            write_wav(root / rel, generate_array(spec, duration_s), SAMPLE_RATE)
            rows.append(ManifestRow(pid, pos, spec.label, round(age, 2), sex, rel))
    write_manifest(root, rows)
    return rows
