"""Patch embedding and a pre-norm transformer stack with tapped outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor


class ConfigError(ValueError):
    """Mutually inconsistent model or data configuration."""


@dataclass
class EncoderConfig:
    patch_size: int = 8
    token_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4
    tap_layers: tuple[int, ...] = (1, 2, 3, 4)
    in_channels: int = 3

    def __post_init__(self):
        self.tap_layers = tuple(int(t) for t in self.tap_layers)
        if self.token_dim % self.num_heads:
            raise ConfigError(f"token_dim {self.token_dim} is not divisible by num_heads {self.num_heads}")
        if list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise ConfigError(f"tap_layers must be strictly ascending, got {self.tap_layers}")
        if not self.tap_layers or self.tap_layers[0] < 1 or self.tap_layers[-1] > self.num_layers:
            raise ConfigError(f"tap_layers {self.tap_layers} must lie in [1, {self.num_layers}]")
        if self.patch_size < 1 or self.in_channels < 1:
            raise ConfigError("patch_size and in_channels must be positive")

    @classmethod
    def full(cls, in_channels: int = 3) -> "EncoderConfig":
        """ViT-Base geometry."""
        return cls(patch_size=16, token_dim=768, num_layers=12, num_heads=12, mlp_ratio=4,
                   tap_layers=(3, 6, 9, 12), in_channels=in_channels)

    @classmethod
    def toy(cls, in_channels: int = 3) -> "EncoderConfig":
        return cls(in_channels=in_channels)


@dataclass
class TokenSequence:
    """Tokens [B, N_p, D] plus the (H/p, W/p) grid they came from."""

    tokens: Tensor
    grid: tuple[int, int]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[-2]

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


def patchify(x: Tensor, p: int) -> tuple[Tensor, tuple[int, int]]:
    """[B,H,W,C] -> [B, N_p, p*p*C]; patches row-major over the grid, pixels (row, col, channel)."""
    B, H, W, C = x.shape
    if H % p or W % p:
        raise ConfigError(f"input {H}x{W} is not divisible by patch size {p}; pad or crop to a multiple of {p}")
    gh, gw = H // p, W // p
    y = T.reshape(x, (B, gh, p, gw, p, C))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    return T.reshape(y, (B, gh * gw, p * p * C)), (gh, gw)


class PatchEmbed(Module):
    def __init__(self, rng: np.random.Generator, cfg: EncoderConfig):
        self.patch_size = cfg.patch_size
        self.in_channels = cfg.in_channels
        self.proj = Linear(rng, cfg.patch_size ** 2 * cfg.in_channels, cfg.token_dim)

    def forward(self, x: Tensor) -> TokenSequence:
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[-1] != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} input channels, got {x.shape[-1]}")
        patches, grid = patchify(x, self.patch_size)
        return TokenSequence(self.proj(patches), grid)

    def channel_rows(self, channels) -> np.ndarray:
        """Row indices of the projection weight fed by the given input channels."""
        p, c = self.patch_size, self.in_channels
        ch = np.arange(p * p * c) % c
        return np.flatnonzero(np.isin(ch, list(channels)))


class PositionalEmbedding(Module):
    def __init__(self, rng: np.random.Generator, grid: tuple[int, int], dim: int):
        self.grid = tuple(grid)
        self.table = Parameter(trunc_normal(rng, (grid[0] * grid[1], dim)))

    def forward(self, tok: TokenSequence) -> TokenSequence:
        if tuple(tok.grid) != self.grid or tok.dim != self.table.shape[1]:
            raise ConfigError(f"positional table sized for grid {self.grid} x {self.table.shape[1]}, "
                              f"got grid {tok.grid} x {tok.dim}")
        return TokenSequence(tok.tokens + self.table, tok.grid)


class Attention(Module):
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.heads = heads
        self.q = Linear(rng, dim, dim)
        # a key bias shifts every score of a query equally, which softmax ignores
        self.k = Linear(rng, dim, dim, bias=False)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, N, D = x.shape
        return T.transpose(T.reshape(x, (B, N, self.heads, D // self.heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        B, N, D = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(D // self.heads))
        attn = T.softmax(scores)
        self.last_weights = attn.data
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, N, D))
        return self.out(ctx)


class Block(Module):
    """Pre-norm transformer layer: x + MHSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(rng, dim, dim * mlp_ratio)
        self.fc2 = Linear(rng, dim * mlp_ratio, dim)

    def forward(self, tok: TokenSequence) -> TokenSequence:
        x = tok.tokens
        if x.shape[-1] != self.norm1.weight.shape[0]:
            raise ConfigError(f"token dim {x.shape[-1]} != block dim {self.norm1.weight.shape[0]}")
        x = x + self.attn(self.norm1(x))
        x = x + self.fc2(T.gelu(self.fc1(self.norm2(x))))
        return TokenSequence(x, tok.grid)


class VitEncoder(Module):
    """Patch embed + positional table + L blocks; returns tokens at each tap layer."""

    def __init__(self, rng: np.random.Generator, cfg: EncoderConfig, image_size: tuple[int, int]):
        H, W = image_size
        if H % cfg.patch_size or W % cfg.patch_size:
            raise ConfigError(f"image {H}x{W} not divisible by patch size {cfg.patch_size}")
        self.cfg = cfg
        self.embed = PatchEmbed(rng, cfg)
        self.pos = PositionalEmbedding(rng, (H // cfg.patch_size, W // cfg.patch_size), cfg.token_dim)
        self.blocks = [Block(rng, cfg.token_dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.num_layers)]

    def tokens(self, x: Tensor) -> TokenSequence:
        return self.pos(self.embed(x))

    def encode_with_taps(self, tok: TokenSequence) -> list[TokenSequence]:
        taps = set(self.cfg.tap_layers)
        out = []
        # layers beyond the deepest tap cannot influence any output
        for layer, block in enumerate(self.blocks[:self.cfg.tap_layers[-1]], start=1):
            tok = block(tok)
            if layer in taps:
                out.append(tok)
        return out

    def forward(self, x: Tensor) -> list[TokenSequence]:
        return self.encode_with_taps(self.tokens(x))
