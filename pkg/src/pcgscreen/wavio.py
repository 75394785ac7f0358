"""RIFF/WAV reading and writing plus the corpus manifest."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CorruptHeader, Label, PcgRecording, Position, UnsupportedFormat

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("patient_id", "position", "label", "age_years", "sex", "path")


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader("missing RIFF/WAVE signature")
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise CorruptHeader(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Return ``(samples, sample_rate)`` with samples scaled to [-1, 1]."""
    data = Path(path).read_bytes()
    fmt = None
    payload = None
    for cid, body in _read_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptHeader("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise CorruptHeader("extensible fmt chunk too short")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
    if fmt is None or payload is None:
        raise CorruptHeader("fmt or data chunk missing")

    tag, channels, rate, _, block_align, bits = fmt
    if channels != 1:
        raise UnsupportedFormat(f"{channels} channels; only mono is supported")
    if rate == 0 or block_align == 0:
        raise CorruptHeader("zero sample rate or block alignment")
    payload = payload[:len(payload) - len(payload) % block_align]

    if tag == WAVE_FORMAT_PCM and bits == 8:
        samples = (np.frombuffer(payload, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif tag == WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / float(1 << 23)
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(f"format tag {tag:#x} with {bits} bits per sample")
    return samples, rate


def write_wav(path: str | Path, samples, sample_rate: int, bits: int = 16) -> None:
    """Write mono audio; ``bits`` is 16 (PCM) or 32 (IEEE float)."""
    x = np.asarray(samples, dtype=np.float64)
    if bits == 16:
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag = WAVE_FORMAT_PCM
    elif bits == 32:
        payload = x.astype("<f4").tobytes()
        tag = WAVE_FORMAT_IEEE_FLOAT
    else:
        raise UnsupportedFormat(f"cannot write {bits}-bit audio")
    align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * align, align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


@dataclass(frozen=True)
class ManifestRow:
    patient_id: str
    position: Position
    label: Label
    age_years: float | None
    sex: str | None
    path: str


def read_manifest(root: str | Path) -> list[ManifestRow]:
    root = Path(root)
    rows = []
    with open(root / MANIFEST_NAME, newline="") as fh:
        for rec in csv.DictReader(fh):
            age = rec.get("age_years") or ""
            rows.append(ManifestRow(
                patient_id=rec["patient_id"],
                position=Position(rec.get("position") or "UNKNOWN"),
                label=Label(rec.get("label") or "UNLABELED"),
                age_years=float(age) if age.strip() else None,
                sex=(rec.get("sex") or None),
                path=rec["path"],
            ))
    return rows


def write_manifest(root: str | Path, rows: list[ManifestRow]) -> None:
    with open(Path(root) / MANIFEST_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            age = "" if r.age_years is None else f"{r.age_years:.2f}"
            writer.writerow([r.patient_id, r.position.value, r.label.value, age, r.sex or "", r.path])


def _metadata_from_path(path: Path) -> tuple[str, Position]:
    # <root>/<patient_id>/<position>_<index>.wav
    stem = path.stem.split("_")[0].upper()
    position = Position(stem) if stem in Position.__members__ else Position.UNKNOWN
    return path.parent.name, position


def load_wav(path: str | Path, meta: ManifestRow | None = None) -> PcgRecording:
    """Load a mono WAV file as a :class:`PcgRecording`.

    Metadata comes from ``meta`` when given, otherwise from the canonical
    ``<patient_id>/<position>_<index>.wav`` naming.
    """
    path = Path(path)
    samples, rate = read_wav(path)
    if meta is not None:
        return PcgRecording(samples, rate, meta.patient_id, meta.position, meta.label,
                            meta.age_years, meta.sex)
    patient_id, position = _metadata_from_path(path)
    return PcgRecording(samples, rate, patient_id, position)


def load_corpus(root: str | Path) -> list[PcgRecording]:
    """Load every recording listed in ``<root>/manifest.csv``."""
    root = Path(root)
    return [load_wav(root / row.path, row) for row in read_manifest(root)]
