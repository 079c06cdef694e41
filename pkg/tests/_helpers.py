"""Shared builders for the test modules."""

import numpy as np

from rcdpt.encoder import EncoderConfig
from rcdpt.model import build_model
from rcdpt.reassemble import FusionMode, ReassembleConfig


def toy_configs(size=16, p=8, D=8, out_dim=4):
    enc = EncoderConfig(patch_size=p, token_dim=D, num_layers=4, num_heads=2, mlp_ratio=2, tap_layers=(1, 2, 3, 4))
    reasm = ReassembleConfig(scales=(2, 4, 8, 16), out_dim=out_dim, patch_size=p, image_size=(size, size))
    return enc, reasm


def toy_model(mode, seed=0, size=16, **kw):
    enc, reasm = toy_configs(size)
    return build_model(mode, enc, reasm, seed=seed, **kw)


def graft_image_branch(fused, image_only):
    """Copy every image-side weight of ``image_only`` into ``fused``; every radar input row becomes zero."""
    src = dict(image_only.named_parameters())
    D = image_only.enc_cfg.token_dim
    for name, p in fused.named_parameters():
        if name in src and src[name].shape == p.shape:
            p.data[...] = src[name].data
        elif name.endswith("read.fc.weight"):
            p.data[:D] = src[name].data
            p.data[D:] = 0.0
        elif name == "image_encoder.embed.proj.weight":
            embed = fused.image_encoder.embed
            p.data[:] = 0.0
            p.data[embed.channel_rows([0, 1, 2])] = src[name].data


def random_inputs(seed, size=16, batch=1, radar_channels=3):
    rng = np.random.default_rng(seed)
    image = rng.random((batch, size, size, 3))
    radar = np.where(rng.random((batch, size, size, radar_channels)) < 0.05,
                     rng.uniform(2, 60, (batch, size, size, radar_channels)), 0.0)
    return image, radar


ALL_MODES = list(FusionMode)
