"""Binary checkpoint: length-prefixed JSON header followed by named tensors.

Layout (all integers little-endian)::

    b"PQVT"  u32 version  u64 header_len  header_json
    repeated n_tensors times:
        u64 name_len  name (utf-8)  u64 rank  u64 dims[rank]  data

``data`` is row-major float32 unless the header says ``"dtype": "float64"``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"PQVT"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray | Tensor], header: dict,
                    dtype: str = "float32") -> None:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {dtype!r}")
    meta = {"magic": MAGIC.decode(), "version": VERSION, **header,
            "dtype": dtype, "n_tensors": len(tensors)}
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(head)), head]
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(raw)) + raw)
        parts.append(struct.pack(f"<Q{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, tensors)``; tensors come back as native-endian arrays."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PQVT checkpoint")
    version, hlen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    dt = np.dtype(_DTYPES[header.get("dtype", "float32")])
    tensors = {}
    for _ in range(header["n_tensors"]):
        (nlen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(dims)
        pos += count * dt.itemsize
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return header, tensors
