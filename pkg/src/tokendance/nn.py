"""Small layer library on top of :mod:`tokendance.autodiff`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if value.name is None:
                    value.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        if item.name is None:
                            item.name = f"{path}.{i}"
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def finalize_names(self, prefix: str = "") -> "Module":
        """Pin every parameter's name to its attribute path."""
        for path, p in self.named_parameters(prefix):
            p.name = path
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters in state: {sorted(missing)[:5]}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.shape:
                    raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
                p.data = arr.astype(p.data.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        self.weight = Parameter(_uniform(rng, (kernel, c_in, c_out), kernel * c_in))
        self.bias = Parameter(np.zeros(c_out, np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        # fan_in of the equivalent direct convolution
        self.weight = Parameter(_uniform(rng, (kernel, c_in, c_out), c_in * max(1, kernel // stride)))
        self.bias = Parameter(np.zeros(c_out, np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, rng, num: int, dim: int):
        self.weight = Parameter(rng.normal(0.0, 1.0, size=(num, dim)).astype(np.float32))

    def __call__(self, ids) -> Tensor:
        return ad.embedding(self.weight, ids)


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim, np.float32))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        ms = ad.mean(x * x, axis=-1, keepdims=True)
        return x * ((ms + self.eps) ** -0.5) * self.weight
