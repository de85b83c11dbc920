"""Binary parameter checkpoints.

Layout (little-endian)::

    b"LFPF" | u32 version | records...
    record = u32 name_len | name (UTF-8) | 4 x u32 shape | f64 payload

Shapes of lower rank are right-padded with ones; the loader hands back the
padded rank-4 arrays and callers reshape into their own parameter shapes.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from latentfp.errors import FormatError

MAGIC = b"LFPF"
VERSION = 1


def _shape4(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise ValueError(f"checkpoint records hold at most rank-4 arrays, got {shape}")
    return tuple(shape) + (1,) * (4 - len(shape))  # type: ignore[return-value]


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<4I", *_shape4(np.shape(arr))))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic", 0)
    if len(blob) < 8:
        raise FormatError("truncated header", len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        start = pos
        try:
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            if len(name.encode("utf-8")) != n:
                raise struct.error("short name")
            pos += n
            shape = struct.unpack_from("<4I", blob, pos)
            pos += 16
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt record header: {exc}", start) from None
        count = int(np.prod(shape))
        end = pos + 8 * count
        if end > len(blob):
            raise FormatError(f"truncated payload for {name!r}", pos)
        out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos = end
    return out


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(arrays))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
