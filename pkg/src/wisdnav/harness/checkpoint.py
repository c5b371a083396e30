"""``WISD`` binary tensor checkpoints.

Layout (all integers little-endian)::

    b"WISD"                  magic
    u32 version              currently 1
    u32 n, n bytes           UTF-8 JSON metadata (architecture, action mode)
    u32 count                number of tensors
    per tensor:
        u16 n, n bytes       UTF-8 name
        u8 ndim, ndim * u32  dimensions
        prod(dims) * f32     values, C order
    u32 crc32                over everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..exceptions import ArchitectureMismatch, CorruptCheckpoint

MAGIC = b"WISD"
VERSION = 1


def save_checkpoint(tensors: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("unexpected end of checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expect_act_dim: int | None = None,
                    expect_obs_dim: int | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors (as float32 arrays) and metadata, validating the file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptCheckpoint("missing WISD magic")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted file)")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint("unreadable metadata") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
    if r.pos != len(body):
        raise CorruptCheckpoint("trailing bytes after tensor table")

    if expect_act_dim is not None and int(meta.get("act_dim", -1)) != expect_act_dim:
        raise ArchitectureMismatch(
            f"checkpoint action head has {meta.get('act_dim')} dims, run expects {expect_act_dim}"
        )
    if expect_obs_dim is not None and int(meta.get("obs_dim", -1)) != expect_obs_dim:
        raise ArchitectureMismatch(
            f"checkpoint expects {meta.get('obs_dim')} inputs, run provides {expect_obs_dim}"
        )
    return tensors, meta
