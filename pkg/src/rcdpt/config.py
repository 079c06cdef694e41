"""Flat ``key = value`` configuration files and the training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

from .encoder import ConfigError, EncoderConfig
from .reassemble import FusionMode, ReassembleConfig


def format_kv(items: dict[str, Any]) -> str:
    lines = []
    for key, value in items.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, FusionMode):
            value = value.value
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


@dataclass
class TrainConfig:
    mode: FusionMode = FusionMode.RCDPT
    lr0: float = 1e-4
    lr_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    w_l1: float = 1.0
    w_smooth: float = 0.1
    depth_cap: float = 80.0
    checkpoint_every: int = 10
    augment: bool = True
    # model geometry (toy preset)
    size: int = 48
    patch_size: int = 8
    token_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4
    tap_layers: tuple[int, ...] = (1, 2, 3, 4)
    scales: tuple[int, ...] = (2, 4, 8, 16)
    out_dim: int = 32
    read_layers: int = 1
    radar_channels: int = 3
    depth_scale: float = 40.0
    init_depth: float = 20.0

    def __post_init__(self):
        self.mode = FusionMode.parse(self.mode)
        self.tap_layers = tuple(int(v) for v in self.tap_layers)
        self.scales = tuple(int(v) for v in self.scales)
        for name in ("lr0", "lr_power", "depth_cap", "depth_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must lie in [0, 1) and weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(patch_size=self.patch_size, token_dim=self.token_dim, num_layers=self.num_layers,
                             num_heads=self.num_heads, mlp_ratio=self.mlp_ratio, tap_layers=self.tap_layers)

    def reassemble_config(self) -> ReassembleConfig:
        return ReassembleConfig(scales=self.scales, out_dim=self.out_dim, patch_size=self.patch_size,
                                image_size=(self.size, self.size), read_layers=self.read_layers)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_kv(cls, items: dict[str, Any], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Overlay string or typed values onto ``base`` (defaults when absent)."""
        base = base or cls()
        types = {f.name: f for f in dataclasses.fields(cls)}
        current = base.to_dict()
        for key, raw in items.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            current[key] = _coerce(current[key], raw)
        return cls(**current)


def _coerce(template, raw):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(template, tuple) else raw
    if isinstance(template, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, FusionMode):
        return FusionMode.parse(raw)
    if isinstance(template, tuple):
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw
