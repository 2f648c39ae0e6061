"""Stage-1 dance and music tokenizers with FSQ bottlenecks.

Each stream has its own encoder (3 strided 1D convolutions, then a 2-layer
MLP down to the FSQ channels) and decoder (2-layer MLP, then 3 transposed
convolutions), so a token covers 8 frames. Inputs are z-scored with corpus
statistics held by the codec; decoders emit the same normalised space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fsq
from .audiofeat import ACOUSTIC, N_FEATURES, SEMANTIC
from .autodiff import Parameter, Tensor
from .errors import TrainingDivergedError
from .motion import POSE_DIM, BodySplit, default_split, join_body, split_body, dance_loss
from .nn import Conv1d, ConvTranspose1d, Linear, Module
from .optim import Adam

log = logging.getLogger(__name__)

DOWNSAMPLE = 8
_STD_FLOOR = 1e-2
FORWARD_CALLS = {"encode": 0, "decode": 0}


@dataclass(frozen=True)
class TokenizerConfig:
    conv_channels: int = 256
    mlp_hidden: int = 256
    levels: tuple[int, ...] = (8, 5, 5, 5)
    kernel: int = 4

    @property
    def fsq(self) -> fsq.FSQLevels:
        return fsq.FSQLevels(self.levels)


class StreamCodec(Module):
    """Encoder, FSQ and decoder for one feature stream of width ``width``."""

    def __init__(self, rng: np.random.Generator, width: int, cfg: TokenizerConfig):
        c, h, k = cfg.conv_channels, cfg.mlp_hidden, cfg.kernel
        pad = (k - 2) // 2
        self.width = width
        self.levels = cfg.fsq
        self.enc_conv = [Conv1d(rng, width, c, k, 2, pad), Conv1d(rng, c, c, k, 2, pad), Conv1d(rng, c, c, k, 2, pad)]
        self.enc_mlp = [Linear(rng, c, h), Linear(rng, h, self.levels.d)]
        self.dec_mlp = [Linear(rng, self.levels.d, h), Linear(rng, h, c)]
        self.dec_conv = [ConvTranspose1d(rng, c, c, k, 2, pad), ConvTranspose1d(rng, c, c, k, 2, pad),
                         ConvTranspose1d(rng, c, width, k, 2, pad)]
        self.mean = np.zeros(width, np.float32)
        self.std = np.ones(width, np.float32)

    def fit_normalizer(self, x: np.ndarray) -> None:
        flat = np.asarray(x, dtype=np.float64).reshape(-1, self.width)
        self.mean = flat.mean(0).astype(np.float32)
        self.std = np.maximum(flat.std(0), _STD_FLOOR).astype(np.float32)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x) - self.mean) / self.std).astype(np.float32)

    def denormalize(self, y):
        if isinstance(y, Tensor):
            return y * self.std + self.mean
        return np.asarray(y) * self.std + self.mean

    def latent(self, xn) -> Tensor:
        h = ad.as_tensor(xn)
        if h.shape[-1] != self.width:
            raise ValueError(f"stream expects width {self.width}, got {h.shape[-1]}")
        for conv in self.enc_conv:
            h = ad.silu(conv(h))
        return self.enc_mlp[1](ad.silu(self.enc_mlp[0](h)))

    def quantize(self, xn) -> tuple[Tensor, np.ndarray]:
        zhat, digits = fsq.quantize_st(self.latent(xn), self.levels)
        return fsq.to_grid(zhat, self.levels), digits

    def decode_grid(self, grid) -> Tensor:
        h = ad.silu(self.dec_mlp[0](ad.as_tensor(grid)))
        h = ad.silu(self.dec_mlp[1](h))
        h = ad.silu(self.dec_conv[0](h))
        h = ad.silu(self.dec_conv[1](h))
        return self.dec_conv[2](h)

    def reconstruct(self, xn) -> Tensor:
        grid, _ = self.quantize(xn)
        return self.decode_grid(grid)

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Raw (B, T, width) -> token ids (B, T / 8)."""
        with ad.no_grad():
            _, digits = self.quantize(self.normalize(x))
        return fsq.pack(digits, self.levels)

    def decode(self, tokens: np.ndarray) -> np.ndarray:
        """Token ids (B, T_tok) -> raw (B, 8 T_tok, width)."""
        grid = fsq.dequantize(fsq.unpack(tokens, self.levels), self.levels)
        with ad.no_grad():
            y = self.decode_grid(grid)
        return self.denormalize(y.data).astype(np.float32)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}__mean": self.mean, f"{prefix}__std": self.std}

    def load_state(self, prefix: str, state: dict[str, np.ndarray]) -> None:
        self.mean = np.asarray(state[f"{prefix}__mean"], np.float32)
        self.std = np.asarray(state[f"{prefix}__std"], np.float32)


def pad_to_multiple(x: np.ndarray, multiple: int = DOWNSAMPLE, axis: int = -2) -> tuple[np.ndarray, int]:
    """Repeat the last frame so the time axis is divisible by ``multiple``."""
    n = x.shape[axis]
    if n == 0:
        raise ValueError("cannot tokenize an empty sequence")
    pad = (-n) % multiple
    if pad == 0:
        return x, 0
    widths = [(0, 0)] * x.ndim
    widths[axis] = (0, pad)
    return np.pad(x, widths, mode="edge"), pad


class DanceTokenizer(Module):
    def __init__(self, rng: np.random.Generator, cfg: TokenizerConfig = TokenizerConfig(),
                 split: BodySplit | None = None, fps: float = 30.0):
        self.split = split or default_split()
        self.fps = fps
        self.cfg = cfg
        self.upper = StreamCodec(rng, self.split.upper_dim, cfg)
        self.lower = StreamCodec(rng, self.split.lower_dim, cfg)
        self.finalize_names()

    def fit_normalizer(self, motions: np.ndarray) -> None:
        up, lo = split_body(motions, self.split)
        self.upper.fit_normalizer(up)
        self.lower.fit_normalizer(lo)

    def reconstruct(self, motions: np.ndarray) -> Tensor:
        """Differentiable encode -> FSQ -> decode in raw pose space, (B, T, 147)."""
        up, lo = split_body(np.asarray(motions, np.float32), self.split)
        ru = self.upper.denormalize(self.upper.reconstruct(self.upper.normalize(up)))
        rl = self.lower.denormalize(self.lower.reconstruct(self.lower.normalize(lo)))
        return join_body(ru, rl, self.split)

    def loss(self, motions: np.ndarray, deriv_scale: float | None = None) -> tuple[Tensor, dict[str, float]]:
        recon = self.reconstruct(motions)
        return dance_loss(recon, np.asarray(motions, np.float32), self.fps, deriv_scale=deriv_scale)

    def encode(self, motions: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """(B, T, 147) or (T, 147) -> (upper ids, lower ids, padded frame count)."""
        x = np.asarray(motions, np.float32)
        if x.shape[-2] == 0:
            raise ValueError("cannot tokenize an empty motion sequence")
        if x.shape[-1] != POSE_DIM:
            raise ValueError(f"motion width {x.shape[-1]} != {POSE_DIM}")
        single = x.ndim == 2
        x, pad = pad_to_multiple(x[None] if single else x)
        FORWARD_CALLS["encode"] += 1
        up, lo = split_body(x, self.split)
        tu, tl = self.upper.encode(up), self.lower.encode(lo)
        return (tu[0], tl[0], pad) if single else (tu, tl, pad)

    def decode(self, upper_tokens, lower_tokens) -> np.ndarray:
        tu, tl = np.asarray(upper_tokens), np.asarray(lower_tokens)
        if tu.shape != tl.shape:
            raise ValueError(f"upper/lower token lengths differ: {tu.shape} vs {tl.shape}")
        single = tu.ndim == 1
        if single:
            tu, tl = tu[None], tl[None]
        FORWARD_CALLS["decode"] += 1
        out = join_body(self.upper.decode(tu), self.lower.decode(tl), self.split)
        return out[0] if single else out

    def extra_state(self) -> dict[str, np.ndarray]:
        return {**self.upper.state("upper"), **self.lower.state("lower")}

    def load_extra_state(self, state) -> None:
        self.upper.load_state("upper", state)
        self.lower.load_state("lower", state)


class MusicTokenizer(Module):
    """Semantic (20) and acoustic (15) streams, or one 35-wide stream when not decomposed."""

    def __init__(self, rng: np.random.Generator, cfg: TokenizerConfig = TokenizerConfig(),
                 decomposed: bool = True):
        self.cfg = cfg
        self.decomposed = decomposed
        if decomposed:
            self.streams = [StreamCodec(rng, 20, cfg), StreamCodec(rng, 15, cfg)]
        else:
            self.streams = [StreamCodec(rng, N_FEATURES, cfg)]
        self.finalize_names()

    @property
    def stream_names(self) -> list[str]:
        return ["music-semantic", "music-acoustic"] if self.decomposed else ["music-full"]

    def parts(self, feats: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(feats, np.float32)
        if x.shape[-1] != N_FEATURES:
            raise ValueError(f"music features must be {N_FEATURES} wide, got {x.shape[-1]}")
        return [x[..., SEMANTIC], x[..., ACOUSTIC]] if self.decomposed else [x]

    def fit_normalizer(self, feats: np.ndarray) -> None:
        for codec, part in zip(self.streams, self.parts(feats)):
            codec.fit_normalizer(part)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        """Full 35-wide features in the normalised space the codecs reconstruct."""
        parts = [c.normalize(p) for c, p in zip(self.streams, self.parts(feats))]
        return np.concatenate(parts, axis=-1)

    def loss(self, feats: np.ndarray) -> tuple[Tensor, dict[str, float]]:
        """Sum of per-stream mean-squared reconstruction errors (normalised space)."""
        total = None
        terms = {}
        for name, codec, part in zip(self.stream_names, self.streams, self.parts(feats)):
            xn = codec.normalize(part)
            term = ad.mse_loss(codec.reconstruct(xn), xn)
            terms[name] = float(term.data)
            total = term if total is None else total + term
        return total, terms

    def encode(self, feats: np.ndarray) -> tuple[list[np.ndarray], int]:
        x = np.asarray(feats, np.float32)
        if x.shape[-2] == 0:
            raise ValueError("cannot tokenize an empty feature sequence")
        single = x.ndim == 2
        x, pad = pad_to_multiple(x[None] if single else x)
        FORWARD_CALLS["encode"] += 1
        toks = [codec.encode(p) for codec, p in zip(self.streams, self.parts(x))]
        return ([t[0] for t in toks] if single else toks), pad

    def decode(self, tokens: list) -> np.ndarray:
        toks = [np.asarray(t) for t in tokens]
        if len(toks) != len(self.streams) or len({t.shape for t in toks}) != 1:
            raise ValueError("need one equal-length token stream per music codebook")
        single = toks[0].ndim == 1
        if single:
            toks = [t[None] for t in toks]
        out = np.concatenate([c.decode(t) for c, t in zip(self.streams, toks)], axis=-1)
        return out[0] if single else out

    def reconstruct_normalized(self, feats: np.ndarray) -> np.ndarray:
        """Round trip through the codebooks, returned in normalised feature space."""
        toks, pad = self.encode(feats)
        rec = self.decode(toks)
        rec_n = self.normalize(rec)
        n = np.asarray(feats).shape[-2]
        return rec_n[..., :n, :]

    def extra_state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, c in enumerate(self.streams):
            out.update(c.state(f"stream{i}"))
        return out

    def load_extra_state(self, state) -> None:
        for i, c in enumerate(self.streams):
            c.load_state(f"stream{i}", state)


# ---------------------------------------------------------------------------
# training


@dataclass
class Stage1Result:
    dance: DanceTokenizer | None
    music: MusicTokenizer | None
    curves: list[tuple[int, str, float]] = field(default_factory=list)

    def final(self, term: str) -> float:
        vals = [v for _, t, v in self.curves if t == term]
        return vals[-1] if vals else float("nan")


def _train_loop(model: Module, loss_fn, data: np.ndarray, *, epochs, batch_size, lr, betas, clip_norm,
                rng, prefix, curves, target=None, target_fn=None):
    opt = Adam(model.parameters(), lr=lr, betas=betas, clip_norm=clip_norm)
    n = data.shape[0]
    bs = min(batch_size, n)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            tape = ad.Tape()
            with tape:
                loss, terms = loss_fn(data[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch)
            grads = ad.backward(tape, loss, accumulate=False)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(epoch, "gradient")
            opt.step(grads)
            for k, v in {"total": float(loss.data), **terms}.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        for k, v in sums.items():
            curves.append((epoch, f"{prefix}/{k}", v / n))
        if epoch % 10 == 0 or epoch == 1:
            log.info("%s epoch %d loss %.5f", prefix, epoch, sums["total"] / n)
        if target is not None and target_fn() < target:
            break


def reconstruction_mse(dance: DanceTokenizer, motions: np.ndarray) -> float:
    """Per-dimension MSE of the dance round trip in pose-parameter space."""
    with ad.no_grad():
        rec = dance.reconstruct(motions).data
    return float(np.mean((rec - motions) ** 2))


def music_reconstruction_mse(music: MusicTokenizer, feats: np.ndarray) -> float:
    rec = music.reconstruct_normalized(feats)
    return float(np.mean((rec - music.normalize(feats)) ** 2))


def train_stage1(motions: np.ndarray | None, music_feats: np.ndarray | None, cfg: TokenizerConfig, *,
                 epochs: int = 200, batch_size: int = 32, lr: float = 3e-4, betas=(0.5, 0.99),
                 clip_norm: float = 1.0, seed: int = 0, fps: float = 30.0, decomposed: bool = True,
                 deriv_scale: float | None = None, target_mse: float | None = None) -> Stage1Result:
    """Train dance and music tokenizers independently.

    ``target_mse`` stops a tokenizer early once its round-trip MSE per
    dimension falls below the value.
    """
    result = Stage1Result(None, None)
    if motions is not None:
        motions = np.asarray(motions, np.float32)
        rng = np.random.default_rng([seed, 1])
        dance = DanceTokenizer(np.random.default_rng([seed, 2]), cfg, fps=fps)
        dance.fit_normalizer(motions)
        _train_loop(dance, lambda x: dance.loss(x, deriv_scale), motions, epochs=epochs, batch_size=batch_size,
                    lr=lr, betas=betas, clip_norm=clip_norm, rng=rng, prefix="dance", curves=result.curves,
                    target=target_mse, target_fn=lambda: reconstruction_mse(dance, motions))
        result.dance = dance
    if music_feats is not None:
        music_feats = np.asarray(music_feats, np.float32)
        rng = np.random.default_rng([seed, 3])
        music = MusicTokenizer(np.random.default_rng([seed, 4]), cfg, decomposed=decomposed)
        music.fit_normalizer(music_feats)
        _train_loop(music, music.loss, music_feats, epochs=epochs, batch_size=batch_size, lr=lr, betas=betas,
                    clip_norm=clip_norm, rng=rng, prefix="music", curves=result.curves,
                    target=target_mse, target_fn=lambda: music_reconstruction_mse(music, music_feats))
        result.music = music
    return result
