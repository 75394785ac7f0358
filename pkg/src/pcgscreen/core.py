"""Shared domain types, run configuration and seeding."""
from __future__ import annotations

import configparser
import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SAMPLE_RATE = 4000


class PcgError(Exception):
    """Base class for every error raised by the toolkit."""


class UnsupportedFormat(PcgError):
    pass


class CorruptHeader(PcgError):
    pass


class TooShort(PcgError):
    pass


class DegenerateSignal(PcgError):
    pass


class InvalidSpec(PcgError):
    pass


class ShapeMismatch(PcgError):
    pass


class DegenerateBatch(PcgError):
    pass


class EmptyClass(PcgError):
    pass


class TooFewPatients(PcgError):
    pass


class EmptyEvaluation(PcgError):
    pass


class MissingMetadata(PcgError):
    pass


class ConfigError(PcgError):
    pass


class Position(str, enum.Enum):
    MV = "MV"
    TV = "TV"
    PV = "PV"
    AV = "AV"
    UNKNOWN = "UNKNOWN"


class Label(str, enum.Enum):
    CHD = "CHD"
    NON_CHD = "NON_CHD"
    UNLABELED = "UNLABELED"

    @property
    def target(self) -> int:
        """Class index used by the classifier (CHD is the positive class 1)."""
        if self is Label.UNLABELED:
            raise MissingMetadata("unlabeled recording has no class index")
        return 1 if self is Label.CHD else 0


class DurationClass(str, enum.Enum):
    S15 = "15s"
    S5 = "5s"
    S3 = "3s"

    @property
    def seconds(self) -> int:
        return int(self.value[:-1])

    def n_samples(self, sample_rate: int = SAMPLE_RATE) -> int:
        return self.seconds * sample_rate

    @classmethod
    def parse(cls, value: "str | DurationClass") -> "DurationClass":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if text in (member.value, member.name.lower(), member.value[:-1]):
                return member
        raise ConfigError(f"unknown duration class {value!r}")


def _frozen_array(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PcgRecording:
    samples: np.ndarray
    sample_rate: int
    patient_id: str = ""
    position: Position = Position.UNKNOWN
    label: Label = Label.UNLABELED
    age_years: float | None = None
    sex: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples))
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidSpec("recording must be a non-empty 1-D sample sequence")
        if self.sample_rate <= 0:
            raise InvalidSpec(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray
    duration_class: DurationClass
    parent_id: str
    patient_id: str = ""
    label: Label = Label.UNLABELED
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples))

    def replace(self, samples) -> "Segment":
        return dataclasses.replace(self, samples=samples)


def split_recording(rec: PcgRecording, duration_class) -> list[Segment]:
    """Cut a recording into consecutive non-overlapping segments.

    Segments start at sample 0 and an incomplete tail is discarded.
    """
    duration_class = DurationClass.parse(duration_class)
    if rec.sample_rate != SAMPLE_RATE:
        raise InvalidSpec(f"expected {SAMPLE_RATE} Hz input, got {rec.sample_rate} Hz")
    seg_len = duration_class.n_samples(rec.sample_rate)
    count = rec.samples.size // seg_len
    if count == 0:
        raise TooShort(f"{rec.samples.size} samples is shorter than one {duration_class.value} segment")
    base = f"{rec.patient_id}_{rec.position.value}"
    return [
        Segment(
            samples=rec.samples[i * seg_len:(i + 1) * seg_len],
            duration_class=duration_class,
            parent_id=f"{base}_{i}",
            patient_id=rec.patient_id,
            label=rec.label,
            sample_rate=rec.sample_rate,
        )
        for i in range(count)
    ]


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for ``seed``, split deterministically by ``keys``."""
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


# section each RunConfig field lives in, for the key = value config file
_SECTIONS = {
    "quality": ("rmssd_threshold", "zcr_threshold", "wavelet_order"),
    "preprocess": ("duration", "filter_order", "low_cut", "high_cut"),
    "model": ("heads", "ffn", "channels", "dropout", "n_block1", "n_block2", "pe_omega"),
    "training": ("learning_rate", "batch_size", "epochs", "patience", "seed"),
    "split": ("test_fraction", "val_fraction"),
    "sweep": ("min_cell_segments",),
}


@dataclass(frozen=True)
class RunConfig:
    rmssd_threshold: float = 0.4
    zcr_threshold: float = 0.4
    wavelet_order: int = 4
    duration: DurationClass = DurationClass.S5
    filter_order: int = 5
    low_cut: float = 25.0
    high_cut: float = 400.0
    heads: int = 2
    ffn: int = 32
    channels: int = 32
    dropout: float = 0.2
    n_block1: int = 3
    n_block2: int = 2
    pe_omega: float = 10000.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    patience: int = 20
    seed: int = 0
    test_fraction: float = 0.05
    val_fraction: float = 0.05
    min_cell_segments: int = 10

    def __post_init__(self):
        object.__setattr__(self, "duration", DurationClass.parse(self.duration))
        for name in ("rmssd_threshold", "zcr_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for name in ("test_fraction", "val_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.channels % self.heads:
            raise ConfigError("heads must divide channels")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "RunConfig | None" = None) -> "RunConfig":
        types = cls.field_types()
        changes = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(raw, types[key], key)
        return dataclasses.replace(base or cls(), **changes)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key] = raw
        return cls.from_mapping(values)

    def dump(self, path: str | Path) -> None:
        parser = configparser.ConfigParser()
        for section, keys in _SECTIONS.items():
            parser[section] = {k: _render(getattr(self, k)) for k in keys}
        with open(path, "w") as fh:
            parser.write(fh)


def _render(value) -> str:
    if isinstance(value, enum.Enum):
        return value.value
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw, kind: type, key: str):
    if isinstance(raw, kind) and not isinstance(raw, bool):
        return raw
    try:
        if issubclass(kind, enum.Enum):
            return kind.parse(raw) if hasattr(kind, "parse") else kind(raw)
        if kind is int:
            return int(str(raw).strip())
        if kind is float:
            return float(str(raw).strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc
    return kind(raw)


assert set(k for keys in _SECTIONS.values() for k in keys) == {f.name for f in dataclasses.fields(RunConfig)}
