"""Finite scalar quantization shared by the dance and music codebooks.

Each latent channel is squashed by a scaled tanh into the digit range
[0, L_i - 1] and rounded; the rounding is straight-through in the backward
pass. Codes are packed big-endian mixed radix, first channel most significant.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_EPS = 1e-3


@dataclass(frozen=True)
class FSQLevels:
    levels: tuple[int, ...] = (8, 5, 5, 5)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(x) for x in self.levels))
        if not self.levels or any(x < 2 for x in self.levels):
            raise ValueError(f"every FSQ level must be >= 2, got {self.levels}")

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def k(self) -> int:
        return int(np.prod(self.levels))

    @property
    def _arr(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.int64)

    def bound_constants(self, dtype=np.float32):
        L = self._arr.astype(np.float64)
        half = (L - 1) * (1 - _EPS) / 2
        offset = np.where(self._arr % 2 == 0, 0.5, 0.0)
        shift = np.arctanh(offset / half)
        center = (self._arr // 2).astype(np.float64)
        return tuple(x.astype(dtype) for x in (half, offset, shift, center))


DEFAULT_LEVELS = FSQLevels()


def bound(z: Tensor, levels: FSQLevels = DEFAULT_LEVELS) -> Tensor:
    """Map latents (..., d) into the digit range (0, L_i - 1) per channel."""
    z = ad.as_tensor(z)
    if z.shape[-1] != levels.d:
        raise ValueError(f"latent width {z.shape[-1]} != FSQ channels {levels.d}")
    if not np.all(np.isfinite(z.data)):
        raise ValueError("non-finite latent passed to FSQ")
    half, offset, shift, center = levels.bound_constants(z.data.dtype)
    # half-step offset on even L keeps both extreme levels reachable
    return ad.tanh(z + shift) * half + (center - offset)


def quantize_st(z: Tensor, levels: FSQLevels = DEFAULT_LEVELS) -> tuple[Tensor, np.ndarray]:
    """Bound and round ``z``; gradients pass the rounding unchanged.

    Returns the rounded digit-space values (a tensor on the tape) and the integer
    digits.
    """
    f = bound(z, levels)
    zhat = ad.round_st(f)
    digits = zhat.data.astype(np.int64)
    return zhat, digits


def to_grid(zhat: Tensor, levels: FSQLevels = DEFAULT_LEVELS) -> Tensor:
    """Digit-space values -> centred grid normalised to [-1, 1] (decoder input)."""
    center = (levels._arr // 2).astype(zhat.data.dtype)
    return (zhat - center) * (1.0 / center)


def dequantize(digits, levels: FSQLevels = DEFAULT_LEVELS) -> np.ndarray:
    digits = np.asarray(digits, dtype=np.int64)
    _check_digits(digits, levels)
    center = levels._arr // 2
    return ((digits - center) / center).astype(np.float32)


def requantize(grid_values, levels: FSQLevels = DEFAULT_LEVELS) -> np.ndarray:
    """Round normalised grid values back to digits."""
    g = np.asarray(grid_values, dtype=np.float64)
    center = levels._arr // 2
    x = g * center + center
    digits = (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
    return np.clip(digits, 0, levels._arr - 1)


def latent_for_digits(digits, levels: FSQLevels = DEFAULT_LEVELS) -> np.ndarray:
    """A latent whose bounded value rounds to ``digits``.

    Interior levels are hit exactly; the saturated end levels are targeted a
    quarter step inside the range since tanh never reaches them.
    """
    digits = np.asarray(digits, dtype=np.int64)
    _check_digits(digits, levels)
    half, offset, shift, center = levels.bound_constants(np.float64)
    target = np.clip(digits.astype(np.float64), 0.25, levels._arr - 1.25)
    return np.arctanh((target - center + offset) / half) - shift


def _check_digits(digits: np.ndarray, levels: FSQLevels) -> None:
    if digits.shape[-1] != levels.d:
        raise ValueError(f"digit width {digits.shape[-1]} != {levels.d}")
    if np.any(digits < 0) or np.any(digits >= levels._arr):
        raise ValueError(f"digit out of range for levels {levels.levels}")


def pack(digits, levels: FSQLevels = DEFAULT_LEVELS) -> np.ndarray:
    """Mixed-radix digits (..., d) -> code indices (...)."""
    digits = np.asarray(digits, dtype=np.int64)
    _check_digits(digits, levels)
    idx = np.zeros(digits.shape[:-1], dtype=np.int64)
    for i, L in enumerate(levels.levels):
        idx = idx * L + digits[..., i]
    return idx


def unpack(index, levels: FSQLevels = DEFAULT_LEVELS) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= levels.k):
        raise ValueError(f"code index outside [0, {levels.k})")
    out = np.empty(idx.shape + (levels.d,), dtype=np.int64)
    rem = idx.copy()
    for i in range(levels.d - 1, -1, -1):
        L = levels.levels[i]
        out[..., i] = rem % L
        rem //= L
    return out


# ---------------------------------------------------------------------------
# TDTK token streams

TOKEN_MAGIC = b"TDTK"
STREAMS = {"dance-upper": 0, "dance-lower": 1, "music-semantic": 2, "music-acoustic": 3, "music-full": 4}
STREAM_NAMES = {v: k for k, v in STREAMS.items()}


@dataclass
class TokenStream:
    stream: str
    tokens: np.ndarray
    levels: FSQLevels = DEFAULT_LEVELS
    pad_frames: int = 0

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ValueError(f"unknown stream id {self.stream!r}")
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ValueError("token stream must be 1-D")
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= self.levels.k):
            raise ValueError(f"token outside [0, {self.levels.k})")

    def __len__(self):
        return int(self.tokens.size)


def write_tokens(path: str | Path, ts: TokenStream) -> None:
    """16-byte header: magic, stream u8, levels u8x4, pad frames u8, reserved u16, count u32."""
    if ts.levels.d > 4 or ts.levels.k > 65535:
        raise ValueError("TDTK supports at most 4 channels and k <= 65535")
    lv = list(ts.levels.levels) + [0] * (4 - ts.levels.d)
    header = TOKEN_MAGIC + struct.pack("<B4BBHI", STREAMS[ts.stream], *lv, ts.pad_frames, 0, len(ts))
    Path(path).write_bytes(header + ts.tokens.astype("<u2").tobytes())


def read_tokens(path: str | Path) -> TokenStream:
    buf = Path(path).read_bytes()
    if buf[:4] != TOKEN_MAGIC or len(buf) < 16:
        raise ValueError(f"{path}: not a TDTK token stream")
    sid, l0, l1, l2, l3, pad, _, count = struct.unpack_from("<B4BBHI", buf, 4)
    levels = FSQLevels(tuple(x for x in (l0, l1, l2, l3) if x))
    tokens = np.frombuffer(buf, dtype="<u2", count=count, offset=16).astype(np.int64)
    return TokenStream(STREAM_NAMES[sid], tokens, levels, pad)
