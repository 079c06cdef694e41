"""Convolutional fusion decoder and depth head."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import ConfigError
from .nn import Conv2d, Module
from .tensor import Tensor


class ResidualConvUnit(Module):
    def __init__(self, rng: np.random.Generator, ch: int):
        self.conv1 = Conv2d(rng, ch, ch, 3)
        self.conv2 = Conv2d(rng, ch, ch, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.relu(self.conv1(T.relu(x))))


class FusionBlock(Module):
    """out = upsample2(RCU2(RCU1(deep + skip)))."""

    def __init__(self, rng: np.random.Generator, ch: int):
        self.rcu1 = ResidualConvUnit(rng, ch)
        self.rcu2 = ResidualConvUnit(rng, ch)

    def forward(self, deep: Tensor, skip: Tensor | None = None) -> Tensor:
        x = deep
        if skip is not None:
            if skip.shape != deep.shape:
                raise ConfigError(f"fusion block: deep map {deep.shape} and skip map {skip.shape} differ")
            x = deep + skip
        return T.upsample_bilinear(self.rcu2(self.rcu1(x)), 2)


class FusionDecoder(Module):
    """Merges a pyramid ordered shallow -> deep, starting from the deepest map."""

    def __init__(self, rng: np.random.Generator, ch: int, num_stages: int):
        self.blocks = [FusionBlock(rng, ch) for _ in range(num_stages)]

    def forward(self, pyramid: list[Tensor]) -> Tensor:
        if len(pyramid) != len(self.blocks):
            raise ConfigError(f"decoder built for {len(self.blocks)} stages, got {len(pyramid)}")
        x = self.blocks[-1](pyramid[-1])
        for i in range(len(pyramid) - 2, -1, -1):
            x = self.blocks[i](x, pyramid[i])
        return x


class DepthHead(Module):
    """conv3 (C -> C/2), bilinear x``upsample``, conv3 -> 32, ReLU, conv1 -> 1, ReLU.

    ``upsample`` is 2 when the shallowest stage sits at s = 4, so the head
    maps H/2 features to full resolution.  ``depth_scale`` converts the head
    output to meters.
    """

    def __init__(self, rng: np.random.Generator, ch: int, upsample: int = 2, depth_scale: float = 1.0,
                 init_depth: float = 0.0):
        self.upsample = upsample
        self.depth_scale = depth_scale
        self.conv1 = Conv2d(rng, ch, max(ch // 2, 1), 3)
        self.conv2 = Conv2d(rng, max(ch // 2, 1), 32, 3)
        self.conv3 = Conv2d(rng, 32, 1, 1, padding=0)
        # start from a flat prediction at init_depth; a random last layer leaves the ReLU mostly dead
        self.conv3.weight.data[:] = 0.0
        self.conv3.bias.data[:] = init_depth / depth_scale

    def forward(self, feat: Tensor) -> Tensor:
        x = self.conv1(feat)
        if self.upsample > 1:
            x = T.upsample_bilinear(x, self.upsample)
        x = T.relu(self.conv2(x))
        y = T.relu(self.conv3(x))
        return y * self.depth_scale if self.depth_scale != 1.0 else y
