"""Depth models for the four fusion topologies, plus checkpoint IO."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import format_kv, parse_kv
from .decoder import DepthHead, FusionDecoder
from .encoder import ConfigError, EncoderConfig, VitEncoder
from .nn import Conv2d, Module, load_weights, save_weights
from .reassemble import FusionMode, ReassembleConfig, ReassembleStage
from .tensor import Tensor

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
# radar returns are divided by this before entering the network
RADAR_SCALE = 20.0


def _rng(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng([seed, component])


class DepthModel(Module):
    """Camera (+ radar) -> dense depth in meters, [B,H,W,3] (+ [B,H,W,C_R]) -> [B,H,W,1]."""

    def __init__(self, mode: FusionMode, enc_cfg: EncoderConfig, reasm_cfg: ReassembleConfig,
                 radar_channels: int = 3, seed: int = 0, depth_scale: float = 1.0, init_depth: float = 0.0):
        mode = FusionMode.parse(mode)
        if enc_cfg.patch_size != reasm_cfg.patch_size:
            raise ConfigError(f"encoder patch size {enc_cfg.patch_size} != reassemble patch size {reasm_cfg.patch_size}")
        if len(reasm_cfg.scales) != len(enc_cfg.tap_layers):
            raise ConfigError(f"{len(enc_cfg.tap_layers)} tap layers but {len(reasm_cfg.scales)} scale ratios")
        if list(reasm_cfg.scales) != [reasm_cfg.scales[0] * 2 ** i for i in range(len(reasm_cfg.scales))]:
            raise ConfigError(f"decoder needs consecutive x2 scale ratios, got {reasm_cfg.scales}")
        if reasm_cfg.scales[0] < 2:
            raise ConfigError("the shallowest scale ratio must be at least 2")
        self.mode = mode
        self.radar_channels = radar_channels
        self.seed = seed
        self.image_size = reasm_cfg.image_size
        img_channels = 3 + radar_channels if mode is FusionMode.EARLY else 3
        self.enc_cfg = dataclasses.replace(enc_cfg, in_channels=img_channels)
        self.reasm_cfg = reasm_cfg
        D, Dh = enc_cfg.token_dim, reasm_cfg.out_dim
        n_read = 2 if mode is FusionMode.RCDPT else 1

        self.image_encoder = VitEncoder(_rng(seed, 0), self.enc_cfg, reasm_cfg.image_size)
        rng = _rng(seed, 1)
        self.stages = [ReassembleStage(rng, D, reasm_cfg, s, n_read) for s in reasm_cfg.scales]
        self.decoder = FusionDecoder(_rng(seed, 2), Dh, len(reasm_cfg.scales))
        if mode in (FusionMode.RCDPT, FusionMode.LATE):
            radar_cfg = dataclasses.replace(enc_cfg, in_channels=radar_channels)
            self.radar_encoder = VitEncoder(_rng(seed, 4), radar_cfg, reasm_cfg.image_size)
        if mode is FusionMode.LATE:
            rng = _rng(seed, 5)
            self.radar_stages = [ReassembleStage(rng, D, reasm_cfg, s, 1) for s in reasm_cfg.scales]
            self.radar_decoder = FusionDecoder(_rng(seed, 6), Dh, len(reasm_cfg.scales))
            self.merge = Conv2d(_rng(seed, 7), 2 * Dh, Dh, kernel=1, padding=0)
        self.head = DepthHead(_rng(seed, 3), Dh, upsample=reasm_cfg.scales[0] // 2,
                              depth_scale=depth_scale, init_depth=init_depth)
        self.depth_scale = depth_scale
        self.init_depth = init_depth

    def _prepare(self, image, radar):
        image = image if isinstance(image, Tensor) else Tensor(image)
        squeeze = image.ndim == 3
        if squeeze:
            image = T.reshape(image, (1,) + image.shape)
        B, H, W, C = image.shape
        if (H, W) != tuple(self.image_size) or C != 3:
            raise ConfigError(f"model expects images of {self.image_size[0]}x{self.image_size[1]}x3, got {H}x{W}x{C}")
        dt = image.dtype
        image = (image - IMAGENET_MEAN.astype(dt)) * (1.0 / IMAGENET_STD).astype(dt)
        if self.mode is FusionMode.IMAGE_ONLY:
            return image, None, squeeze
        if radar is None:
            raise ConfigError(f"mode {self.mode.value} needs a radar input")
        radar = radar if isinstance(radar, Tensor) else Tensor(radar)
        if radar.ndim == 3:
            radar = T.reshape(radar, (1,) + radar.shape)
        if radar.shape != (B, H, W, self.radar_channels):
            raise ConfigError(f"radar shape {radar.shape} != {(B, H, W, self.radar_channels)}")
        return image, radar * (1.0 / RADAR_SCALE), squeeze

    def features(self, image, radar=None) -> Tensor:
        """Decoder output just before the depth head."""
        image, radar, _ = self._prepare(image, radar)
        if self.mode is FusionMode.EARLY:
            taps = self.image_encoder(T.concat([image, radar], axis=-1))
        else:
            taps = self.image_encoder(image)
        if self.mode is FusionMode.RCDPT:
            rtaps = self.radar_encoder(radar)
            pyramid = [stage(ti, tr) for stage, ti, tr in zip(self.stages, taps, rtaps)]
        else:
            pyramid = [stage(t) for stage, t in zip(self.stages, taps)]
        feat = self.decoder(pyramid)
        if self.mode is FusionMode.LATE:
            rtaps = self.radar_encoder(radar)
            rfeat = self.radar_decoder([stage(t) for stage, t in zip(self.radar_stages, rtaps)])
            feat = self.merge(T.concat([feat, rfeat], axis=-1))
        return feat

    def forward(self, image, radar=None) -> Tensor:
        squeeze = (image.ndim == 3)
        depth = self.head(self.features(image, radar))
        return T.reshape(depth, depth.shape[1:]) if squeeze else depth

    def predict(self, image: np.ndarray, radar: np.ndarray | None = None) -> np.ndarray:
        with T.no_grad():
            return self.forward(image, radar).data

    def describe(self) -> dict[str, str]:
        e, r = self.enc_cfg, self.reasm_cfg
        return {
            "mode": self.mode.value,
            "patch_size": e.patch_size,
            "token_dim": e.token_dim,
            "num_layers": e.num_layers,
            "num_heads": e.num_heads,
            "mlp_ratio": e.mlp_ratio,
            "tap_layers": e.tap_layers,
            "scales": r.scales,
            "out_dim": r.out_dim,
            "image_size": r.image_size,
            "read_layers": r.read_layers,
            "radar_channels": self.radar_channels,
            "depth_scale": self.depth_scale,
            "init_depth": self.init_depth,
            "seed": self.seed,
        }


def build_model(mode, enc_cfg: EncoderConfig, reasm_cfg: ReassembleConfig, radar_channels: int = 3,
                seed: int = 0, **head) -> DepthModel:
    return DepthModel(FusionMode.parse(mode), enc_cfg, reasm_cfg, radar_channels, seed, **head)


def save_checkpoint(model: DepthModel, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.txt").write_text(format_kv(model.describe()))
    save_weights(model, d / "weights")


def load_checkpoint(directory: str | os.PathLike) -> DepthModel:
    d = Path(directory)
    path = d / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    m = parse_kv(path.read_text())
    ints = lambda k: tuple(int(v) for v in m[k].split(","))  # noqa: E731
    enc = EncoderConfig(patch_size=int(m["patch_size"]), token_dim=int(m["token_dim"]),
                        num_layers=int(m["num_layers"]), num_heads=int(m["num_heads"]),
                        mlp_ratio=int(m["mlp_ratio"]), tap_layers=ints("tap_layers"))
    reasm = ReassembleConfig(scales=ints("scales"), out_dim=int(m["out_dim"]), patch_size=int(m["patch_size"]),
                             image_size=ints("image_size"), read_layers=int(m["read_layers"]))
    model = build_model(m["mode"], enc, reasm, radar_channels=int(m["radar_channels"]), seed=int(m["seed"]),
                        depth_scale=float(m["depth_scale"]), init_depth=float(m["init_depth"]))
    load_weights(model, d / "weights")
    return model
