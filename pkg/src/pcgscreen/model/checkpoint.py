"""Binary checkpoint format.

Layout (little-endian)::

    b"PCGM" | u32 version | u32 len | architecture JSON
    u32 tensor count
    per tensor: u32 name len | name | u32 rank | u32 dims... | f32 data

Trainable tensors are prefixed ``param/`` and running statistics ``state/``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..core import CorruptHeader
from .network import Architecture, Network

MAGIC = b"PCGM"
VERSION = 1


def save_checkpoint(path: str | Path, net: Network) -> None:
    tensors = [(f"param/{k}", v) for k, v in sorted(net.params.items())]
    tensors += [(f"state/{k}", v) for k, v in sorted(net.state.items())]
    arch = net.arch.to_text().encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(arch)), arch, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode()
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path: str | Path) -> Network:
    data = memoryview(Path(path).read_bytes())
    try:
        if bytes(data[:4]) != MAGIC:
            raise CorruptHeader(f"{path}: not a model checkpoint")
        version, alen = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CorruptHeader(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        arch = Architecture.from_text(bytes(data[pos:pos + alen]).decode())
        pos += alen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params, state = {}, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            name = bytes(data[pos + 4:pos + 4 + nlen]).decode()
            pos += 4 + nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            kind, key = name.split("/", 1)
            (params if kind == "param" else state)[key] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptHeader(f"{path}: truncated or malformed checkpoint") from exc
    return Network(arch, params, state)
