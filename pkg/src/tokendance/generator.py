"""Local-Global-Local token-to-token generator.

Music streams (token ids, or continuous features for the bypass ablation) are
each encoded by a local scanner, fused, refined by a genre-gated global
scanner and then decoded by one local scanner per body half into logits over
the dance codebook. Inference is a single forward pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import TrainingDivergedError, UntrainedModelError
from .nn import Embedding, Linear, Module
from .optim import Adam
from .ssm import BiMambaBlock, MambaBlock, MambaConfig

log = logging.getLogger(__name__)

GATE_INIT = 0.4
FORWARD_CALLS = {"generator": 0}


@dataclass(frozen=True)
class GeneratorConfig:
    d_model: int = 512
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    music_depth: int = 2
    global_depth: int = 4
    dance_depth: int = 2
    vocab: int = 1000
    n_genres: int = 10
    backbone: str = "bimamba"
    music_input: str = "tokens"
    music_widths: tuple[int, ...] = (20, 15)

    def __post_init__(self):
        if min(self.music_depth, self.global_depth, self.dance_depth) < 1:
            raise ValueError("scanner depths must be >= 1")
        if self.backbone not in ("bimamba", "mamba"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.music_input not in ("tokens", "features"):
            raise ValueError(f"unknown music input {self.music_input!r}")
        object.__setattr__(self, "music_widths", tuple(int(w) for w in self.music_widths))

    @property
    def mamba(self) -> MambaConfig:
        return MambaConfig(self.d_model, self.d_state, self.d_conv, self.expand)

    @property
    def n_streams(self) -> int:
        return len(self.music_widths)


@dataclass
class DanceLogits:
    upper: Tensor
    lower: Tensor


def genre_onehot(genre, n_genres: int) -> np.ndarray:
    """Integer label(s) or one-hot row(s) -> validated (B, G) one-hot matrix."""
    g = np.asarray(genre)
    if g.ndim <= 1 and g.dtype.kind in "iu":
        ids = np.atleast_1d(g)
        if np.any(ids < 0) or np.any(ids >= n_genres):
            raise ValueError(f"genre id outside [0, {n_genres})")
        return np.eye(n_genres, dtype=np.float32)[ids]
    g = np.atleast_2d(g).astype(np.float32)
    if g.shape[1] != n_genres or not np.all((g == 0) | (g == 1)) or not np.all(g.sum(1) == 1):
        raise ValueError("genre must be a one-hot vector with exactly one 1")
    return g


class LGLGenerator(Module):
    def __init__(self, rng: np.random.Generator, cfg: GeneratorConfig):
        self.cfg = cfg
        mc = cfg.mamba
        block = BiMambaBlock if cfg.backbone == "bimamba" else MambaBlock
        d = cfg.d_model
        if cfg.music_input == "tokens":
            self.music_in = [Embedding(rng, cfg.vocab, d) for _ in cfg.music_widths]
        else:
            self.music_in = [Linear(rng, w, d) for w in cfg.music_widths]
        self.music_local = [[block(rng, mc) for _ in range(cfg.music_depth)] for _ in cfg.music_widths]
        self.fuse = Linear(rng, d * cfg.n_streams, d)
        self.global_scan = [block(rng, mc) for _ in range(cfg.global_depth)]
        self.gate_weight = [Parameter(rng.uniform(-GATE_INIT, GATE_INIT, (cfg.n_genres, d)).astype(np.float32))
                            for _ in range(cfg.global_depth)]
        self.gate_bias = [Parameter(np.zeros(d, np.float32)) for _ in range(cfg.global_depth)]
        self.shift = [Linear(rng, cfg.n_genres, d) for _ in range(cfg.global_depth)]
        self.upper_local = [block(rng, mc) for _ in range(cfg.dance_depth)]
        self.lower_local = [block(rng, mc) for _ in range(cfg.dance_depth)]
        self.upper_head = Linear(rng, d, cfg.vocab)
        self.lower_head = Linear(rng, d, cfg.vocab)
        self.trained = False
        self.finalize_names()

    # music_local is a list of lists; flatten it for parameter discovery
    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if key == "music_local":
                for i, stack in enumerate(value):
                    for j, blk in enumerate(stack):
                        yield from blk.named_parameters(f"{prefix}music_local.{i}.{j}.")
        yield from super().named_parameters(prefix)

    def gates(self, genre: np.ndarray) -> list[Tensor]:
        e = Tensor(genre_onehot(genre, self.cfg.n_genres))
        return [ad.sigmoid(ad.matmul(e, w) + b) for w, b in zip(self.gate_weight, self.gate_bias)]

    def __call__(self, music: list, genre) -> DanceLogits:
        """``music``: one (B, T) id array or (B, T, w) feature array per stream."""
        cfg = self.cfg
        if len(music) != cfg.n_streams:
            raise ValueError(f"expected {cfg.n_streams} music streams, got {len(music)}")
        lengths = {np.shape(m)[:2] for m in music}
        if len(lengths) != 1:
            raise ValueError(f"music streams differ in length: {sorted(lengths)}")
        batch = np.shape(music[0])[0]
        g = genre_onehot(genre, cfg.n_genres)
        if g.shape[0] == 1 and batch > 1:
            g = np.repeat(g, batch, axis=0)
        if g.shape[0] != batch:
            raise ValueError("one genre label per batch item required")
        FORWARD_CALLS["generator"] += 1

        streams = []
        for i, (m, proj, local) in enumerate(zip(music, self.music_in, self.music_local)):
            if cfg.music_input == "tokens":
                ids = np.asarray(m, dtype=np.int64)
                if ids.ndim != 2:
                    raise ValueError("token streams must be (B, T)")
                h = proj(ids)
            else:
                feats = ad.as_tensor(m)
                if feats.ndim != 3 or feats.shape[-1] != cfg.music_widths[i]:
                    raise ValueError(f"stream {i} needs width {cfg.music_widths[i]}, got {feats.shape}")
                h = proj(feats)
            for blk in local:
                h = blk(h)
            streams.append(h)
        h = self.fuse(ad.concat(streams, axis=-1) if len(streams) > 1 else streams[0])

        e = Tensor(g)
        for blk, w, b, shift in zip(self.global_scan, self.gate_weight, self.gate_bias, self.shift):
            h = blk(h)
            gate = ad.sigmoid(ad.matmul(e, w) + b)  # (B, d)
            h = h * ad.expand_dims(gate, 1) + ad.expand_dims(shift(e), 1)

        up, lo = h, h
        for blk in self.upper_local:
            up = blk(up)
        for blk in self.lower_local:
            lo = blk(lo)
        return DanceLogits(self.upper_head(up), self.lower_head(lo))

    def loss(self, music: list, genre, upper_tokens, lower_tokens) -> tuple[Tensor, DanceLogits]:
        logits = self(music, genre)
        ce = ad.cross_entropy(logits.upper, upper_tokens) + ad.cross_entropy(logits.lower, lower_tokens)
        return ce, logits


def generate(model: LGLGenerator, music: list, genre, mode: str = "argmax",
             temperature: float = 1.0, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Non-autoregressive decoding: one forward pass yields every position."""
    if not model.trained:
        raise UntrainedModelError("generator has no trained parameters; train or load a checkpoint first")
    with ad.no_grad():
        logits = model(music, genre)
    if mode == "argmax":
        return logits.upper.data.argmax(-1), logits.lower.data.argmax(-1)
    if mode != "sample":
        raise ValueError(f"unknown decoding mode {mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)
    return _sample(logits.upper.data, temperature, rng), _sample(logits.lower.data, temperature, rng)


def _sample(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> np.ndarray:
    z = logits.astype(np.float64) / temperature
    z -= z.max(-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(-1, keepdims=True)
    cdf = np.cumsum(p, -1)
    u = rng.random(p.shape[:-1] + (1,))
    return np.minimum((cdf < u).sum(-1), p.shape[-1] - 1)


@dataclass
class Stage2Data:
    music: list[np.ndarray]  # per stream: (N, T) ids or (N, T, w) features
    genre: np.ndarray  # (N,) ints
    upper: np.ndarray  # (N, T)
    lower: np.ndarray  # (N, T)

    def __len__(self):
        return int(self.genre.shape[0])


@dataclass
class Stage2Result:
    model: LGLGenerator
    losses: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


def token_accuracy(model: LGLGenerator, data: Stage2Data, batch_size: int = 16) -> float:
    hits = total = 0
    with ad.no_grad():
        for s in range(0, len(data), batch_size):
            sl = slice(s, s + batch_size)
            lg = model([m[sl] for m in data.music], data.genre[sl])
            hits += int((lg.upper.data.argmax(-1) == data.upper[sl]).sum())
            hits += int((lg.lower.data.argmax(-1) == data.lower[sl]).sum())
            total += 2 * data.upper[sl].size
    return hits / max(total, 1)


def train_stage2(data: Stage2Data, cfg: GeneratorConfig, *, epochs: int = 100, batch_size: int = 64,
                 lr: float = 1e-4, betas=(0.9, 0.99), clip_norm: float = 1.0, seed: int = 0,
                 target_accuracy: float | None = None, model: LGLGenerator | None = None) -> Stage2Result:
    """Cross-entropy training over upper and lower dance tokens.

    When ``target_accuracy`` is set, training stops early once training-set
    token accuracy reaches it (checked at the end of each epoch).
    """
    rng = np.random.default_rng(seed)
    model = model or LGLGenerator(np.random.default_rng(seed + 1), cfg)
    opt = Adam(model.parameters(), lr=lr, betas=betas, clip_norm=clip_norm)
    result = Stage2Result(model)
    n = len(data)
    bs = min(batch_size, n)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            tape = ad.Tape()
            with tape:
                loss, _ = model.loss([m[idx] for m in data.music], data.genre[idx], data.upper[idx], data.lower[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch)
            grads = ad.backward(tape, loss, accumulate=False)
            opt.step(grads)
            total += float(loss.data) * len(idx)
        result.losses.append(total / n)
        model.trained = True
        if target_accuracy is not None or epoch == epochs:
            acc = token_accuracy(model, data)
            result.accuracy.append(acc)
            log.info("stage2 epoch %d loss %.4f acc %.4f", epoch, total / n, acc)
            if target_accuracy is not None and acc >= target_accuracy:
                break
    model.trained = True
    return result
