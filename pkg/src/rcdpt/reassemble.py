"""Reassemble stages: tokens -> image-like feature maps, optionally fusing radar tokens."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ConfigError, TokenSequence
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .tensor import Tensor


class FusionError(ValueError):
    """Image and radar token sequences cannot be fused."""


class FusionMode(str, enum.Enum):
    IMAGE_ONLY = "image-only"
    EARLY = "early"
    LATE = "late"
    RCDPT = "rcdpt-reassemble"

    @classmethod
    def parse(cls, value) -> "FusionMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"imageonly": "image-only", "rcdpt": "rcdpt-reassemble", "reassemble": "rcdpt-reassemble",
                   "rcdptreassemble": "rcdpt-reassemble"}
        key = aliases.get(key.replace("-", ""), key)
        return cls(key)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass
class ReassembleConfig:
    scales: tuple[int, ...] = (2, 4, 8, 16)
    out_dim: int = 32
    patch_size: int = 8
    image_size: tuple[int, int] = (48, 48)
    read_layers: int = 1

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.out_dim <= 0:
            raise ConfigError(f"output dim must be positive, got {self.out_dim}")
        if self.read_layers not in (1, 2):
            raise ConfigError("read_layers must be 1 or 2")
        for s in self.scales:
            check_scale(s, self.patch_size, self.image_size)

    @classmethod
    def full(cls) -> "ReassembleConfig":
        return cls(scales=(4, 8, 16, 32), out_dim=256, patch_size=16, image_size=(384, 384))


def check_scale(s: int, p: int, image_size: tuple[int, int]) -> None:
    H, W = image_size
    if not _is_pow2(s) or not _is_pow2(p):
        raise ConfigError(f"scale ratio {s} and patch size {p} must be powers of two")
    m = max(s, p)
    if H % m or W % m:
        raise ConfigError(f"input {H}x{W} is not divisible by max(s={s}, p={p})")


class ReadProject(Module):
    """Linear map of the concatenated modality tokens back to D, then GELU.

    With ``n_inputs == 1`` this is the image-only counterpart used by the
    baselines, so both variants carry comparable weights.
    """

    def __init__(self, rng: np.random.Generator, dim: int, n_inputs: int, layers: int = 1):
        self.n_inputs = n_inputs
        self.dim = dim
        self.fc = Linear(rng, n_inputs * dim, dim, std=math.sqrt(2.0 / (n_inputs * dim)))
        self.fc2 = Linear(rng, dim, dim, std=math.sqrt(2.0 / dim)) if layers == 2 else None

    def forward(self, *seqs: TokenSequence) -> Tensor:
        if len(seqs) != self.n_inputs:
            raise FusionError(f"read projection expects {self.n_inputs} token sequences, got {len(seqs)}")
        first = seqs[0]
        for other in seqs[1:]:
            if tuple(other.grid) != tuple(first.grid) or other.tokens.shape != first.tokens.shape:
                raise FusionError(f"cannot fuse token grid {first.grid} ({first.tokens.shape}) "
                                  f"with grid {other.grid} ({other.tokens.shape})")
        x = seqs[0].tokens if len(seqs) == 1 else T.concat([s.tokens for s in seqs], axis=-1)
        y = T.gelu(self.fc(x))
        if self.fc2 is not None:
            y = T.gelu(self.fc2(y))
        return y


def spatial_concatenate(tok: Tensor, grid: tuple[int, int]) -> Tensor:
    """[B, N_p, D] -> [B, H/p, W/p, D]; token k lands at (k // gw, k % gw)."""
    gh, gw = grid
    squeeze = tok.ndim == 2
    if squeeze:
        tok = T.reshape(tok, (1,) + tok.shape)
    B, N, D = tok.shape
    if N != gh * gw:
        raise ConfigError(f"{N} tokens cannot fill a {gh}x{gw} grid")
    y = T.reshape(tok, (B, gh, gw, D))
    return T.reshape(y, (gh, gw, D)) if squeeze else y


def spatial_split(feat: Tensor) -> Tensor:
    """Inverse of :func:`spatial_concatenate`."""
    if feat.ndim == 3:
        gh, gw, D = feat.shape
        return T.reshape(feat, (gh * gw, D))
    B, gh, gw, D = feat.shape
    return T.reshape(feat, (B, gh * gw, D))


class Resample(Module):
    """1x1 projection to the output dim, then move from patch scale p to scale s."""

    def __init__(self, rng: np.random.Generator, dim: int, out_dim: int, s: int, p: int):
        if not _is_pow2(s) or not _is_pow2(p):
            raise ConfigError(f"scale ratio {s} and patch size {p} must be powers of two")
        self.s, self.p = s, p
        self.project = Conv2d(rng, dim, out_dim, kernel=1, padding=0)
        if s < p:
            self.spatial = ConvTranspose2d(rng, out_dim, out_dim, stride=p // s)
        elif s > p:
            self.spatial = Conv2d(rng, out_dim, out_dim, kernel=3, stride=s // p, padding=1)
        else:
            self.spatial = None

    def forward(self, feat: Tensor) -> Tensor:
        y = self.project(feat)
        return self.spatial(y) if self.spatial is not None else y


class ReassembleStage(Module):
    """Resample_s o Concatenate o Read_proj for one tap layer."""

    def __init__(self, rng: np.random.Generator, dim: int, cfg: ReassembleConfig, s: int, n_inputs: int):
        self.read = ReadProject(rng, dim, n_inputs, cfg.read_layers)
        self.resample = Resample(rng, dim, cfg.out_dim, s, cfg.patch_size)

    def forward(self, *seqs: TokenSequence) -> Tensor:
        return self.resample(spatial_concatenate(self.read(*seqs), seqs[0].grid))


def reassemble_fused(stage: ReassembleStage, t_image: TokenSequence, t_radar: TokenSequence) -> Tensor:
    return stage(t_image, t_radar)
