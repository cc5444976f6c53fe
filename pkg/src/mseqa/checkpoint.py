"""``MSEQA1`` tensor container.

Layout (all integers little-endian)::

    b"MSEQA1"
    u32 header_length, header_length bytes of UTF-8 JSON
    u32 tensor_count
    per tensor:
        u16 name_length, name (UTF-8)
        u8 ndim, ndim x u32 dims
        prod(dims) x f32, row-major

Tensors are stored as 32-bit floats, so float32 arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSEQA1"


class CheckpointError(ValueError):
    pass


def save(path: str | Path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            data = np.asarray(arr, dtype="<f4")  # ascontiguousarray would turn 0-d into 1-d
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an MSEQA1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (hlen,) = take("<I")
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            (nlen,) = take("<H")
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return header, tensors
