"""TDCK parameter checkpoints.

Layout (little-endian): magic ``TDCK``, version u32, count u32, then per
parameter: name length u16, UTF-8 name, rank u8, dims u32 each, f32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TDCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path: str | Path, params: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a TDCK checkpoint")
    try:
        return _parse(buf, path)
    except CheckpointError:
        raise
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc


def _parse(buf: bytes, path) -> dict[str, np.ndarray]:
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = arr.astype(np.float32)
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out
