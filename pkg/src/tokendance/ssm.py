"""Selective state-space scan (S6), Mamba block and bidirectional Mamba block.

Tensors are channels-last: x is (B, T, d_model). The state recurrence runs
over (B, T, d_inner, N) with per-step, input-dependent (delta, B, C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import Linear, Module, RMSNorm


class ScanDivergenceError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"selective scan produced a non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class MambaConfig:
    d_model: int = 512
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        if min(self.d_model, self.d_state, self.d_conv, self.expand) < 1:
            raise ValueError("Mamba dimensions must be positive")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def dt_rank(self) -> int:
        return max(1, math.ceil(self.d_model / 16))


def discretize(A, delta, B) -> tuple[Tensor, Tensor]:
    """Zero-order hold: A_bar = exp(dA), B_bar = (dA)^-1 (exp(dA) - 1) dB.

    ``A`` is (D, N) diagonal entries, ``delta`` (..., D), ``B`` (..., N); the
    outputs are (..., D, N). Small |dA| falls back to a Taylor expansion.
    """
    A, delta, B = ad.as_tensor(A), ad.as_tensor(delta), ad.as_tensor(B)
    if np.any(delta.data <= 0):
        raise ValueError("discretization step delta must be > 0")
    d = ad.expand_dims(delta, -1)  # (..., D, 1)
    dA = d * A
    A_bar = ad.exp(dA)
    B_bar = ad.expm1_over_x(dA) * d * ad.expand_dims(B, -2)
    return A_bar, B_bar


def _scan(A_bar: Tensor, bx: Tensor, method: str) -> Tensor:
    with ad.finite_checks(False), np.errstate(over="ignore", invalid="ignore"):
        h = ad.linear_scan(A_bar, bx, method=method)
    if not np.all(np.isfinite(h.data)):
        bad = ~np.isfinite(h.data)
        step = int(np.nonzero(bad.reshape(bad.shape[0], bad.shape[1], -1).any(axis=(0, 2)))[0][0])
        raise ScanDivergenceError(step)
    return h


def selective_scan(x, A_bar, B_bar, C, method: str = "parallel") -> Tensor:
    """y_t = sum_n C_t[n] h_t[:, n] with h_t = A_bar_t h_{t-1} + B_bar_t x_t, h_0 = 0.

    x (B, T, D); A_bar, B_bar (B, T, D, N); C (B, T, N).
    """
    x, A_bar, B_bar, C = (ad.as_tensor(v) for v in (x, A_bar, B_bar, C))
    h = _scan(A_bar, B_bar * ad.expand_dims(x, -1), method)
    return ad.tsum(h * ad.expand_dims(C, -2), axis=-1)


def scan_sequential(x, A_bar, B_bar, C) -> Tensor:
    return selective_scan(x, A_bar, B_bar, C, method="sequential")


def scan_parallel(x, A_bar, B_bar, C) -> Tensor:
    return selective_scan(x, A_bar, B_bar, C, method="parallel")


class MambaMixer(Module):
    """One selective-scan pathway: in_proj -> causal conv -> S6 -> gate -> out_proj."""

    def __init__(self, rng: np.random.Generator, cfg: MambaConfig):
        self.cfg = cfg
        di, n = cfg.d_inner, cfg.d_state
        self.in_proj = Linear(rng, cfg.d_model, 2 * di)
        bound = 1.0 / math.sqrt(cfg.d_conv)
        self.conv_weight = Parameter(rng.uniform(-bound, bound, (cfg.d_conv, di)).astype(np.float32))
        self.conv_bias = Parameter(np.zeros(di, np.float32))
        self.x_proj = Linear(rng, di, cfg.dt_rank + 2 * n, bias=False)
        self.dt_proj = Linear(rng, cfg.dt_rank, di)
        dt = np.exp(rng.uniform(math.log(cfg.dt_min), math.log(cfg.dt_max), di))
        self.dt_proj.bias.data = (dt + np.log(-np.expm1(-dt))).astype(np.float32)  # softplus^-1
        self.A_log = Parameter(np.log(np.tile(np.arange(1, n + 1, dtype=np.float32), (di, 1))))
        self.D = Parameter(np.ones(di, np.float32))
        self.out_proj = Linear(rng, di, cfg.d_model)

    def ssm_params(self, u: Tensor):
        cfg = self.cfg
        proj = self.x_proj(u)
        r, n = cfg.dt_rank, cfg.d_state
        delta = ad.softplus(self.dt_proj(proj[..., :r]))
        B = proj[..., r:r + n]
        C = proj[..., r + n:]
        A = -ad.exp(self.A_log)
        return A, delta, B, C

    def __call__(self, x: Tensor, method: str | None = None) -> Tensor:
        di = self.cfg.d_inner
        xz = self.in_proj(x)
        u, z = xz[..., :di], xz[..., di:]
        u = ad.silu(ad.depthwise_conv1d_causal(u, self.conv_weight, self.conv_bias))
        A, delta, B, C = self.ssm_params(u)
        A_bar, B_bar = discretize(A, delta, B)
        y = selective_scan(u, A_bar, B_bar, C, method or ad._SCAN_METHOD[-1])
        y = y + u * self.D
        return self.out_proj(y * ad.silu(z))


class MambaBlock(Module):
    """Pre-norm residual block around a single forward-time mixer."""

    def __init__(self, rng: np.random.Generator, cfg: MambaConfig):
        self.norm = RMSNorm(cfg.d_model)
        self.mixer = MambaMixer(rng, cfg)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mixer(self.norm(x))


class BiMambaBlock(Module):
    """Forward and time-reversed mixers fused by addition, then a multiplicative skip.

    y = x + out_proj(skip(h) * (fwd(h) + rev(bwd(rev(h))))), h = norm(x).
    With ``tied=True`` both directions share one mixer.
    """

    def __init__(self, rng: np.random.Generator, cfg: MambaConfig, tied: bool = False):
        self.norm = RMSNorm(cfg.d_model)
        self.fwd = MambaMixer(rng, cfg)
        self.bwd = None if tied else MambaMixer(rng, cfg)
        self.skip = Linear(rng, cfg.d_model, cfg.d_model)
        self.out_proj = Linear(rng, cfg.d_model, cfg.d_model)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        back = self.bwd or self.fwd
        fused = self.fwd(h) + ad.reverse(back(ad.reverse(h, 1)), 1)
        return x + self.out_proj(self.skip(h) * fused)
