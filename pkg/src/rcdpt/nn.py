"""Parameter containers and the handful of layers the models are built from."""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rten
from . import tensor as T
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations."""
    out = rng.standard_normal(size=shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(size=int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Truncated normal scaled for ReLU-family activations."""
    return trunc_normal(rng, shape, math.sqrt(2.0 / fan_in))


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Base class; parameters and submodules are discovered from attributes."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: stored shape {state[name].shape} != {p.shape}")
            p.data = np.ascontiguousarray(state[name], dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def save_weights(module: Module, directory: str | os.PathLike) -> None:
    """One RTEN file per named parameter."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, p in module.named_parameters():
        rten.save(d / f"{name}.rten", p.data)


def load_weights(module: Module, directory: str | os.PathLike) -> None:
    d = Path(directory)
    state = {}
    for name, _ in module.named_parameters():
        path = d / f"{name}.rten"
        if not path.exists():
            raise FileNotFoundError(f"missing weight file {path}")
        state[name] = rten.load(path)
    module.load_state_dict(state)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True, std: float = 0.02):
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    """Channels-last convolution with a square kernel."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, padding: int | None = None):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(he_normal(rng, (kernel, kernel, c_in, c_out), kernel * kernel * c_in))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution whose kernel equals its stride (non-overlapping)."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, stride: int):
        self.stride = stride
        self.weight = Parameter(he_normal(rng, (stride, stride, c_in, c_out), c_in))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)
