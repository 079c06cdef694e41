import itertools

import numpy as np
import pytest

from _helpers import ALL_MODES, graft_image_branch, random_inputs, toy_configs, toy_model
from rcdpt import tensor as T
from rcdpt.encoder import ConfigError, TokenSequence
from rcdpt.model import build_model, load_checkpoint, save_checkpoint
from rcdpt.reassemble import (FusionError, FusionMode, ReadProject, ReassembleConfig, ReassembleStage, Resample,
                              check_scale, spatial_concatenate, spatial_split)
from rcdpt.tensor import Tensor


def gelu_ref(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))


def seq(arr, grid):
    return TokenSequence(Tensor(arr), grid)


# --- Read_proj -----------------------------------------------------------------------

def test_read_proj_selects_each_modality():
    rng = np.random.default_rng(0)
    with T.precision("float64"):
        ti, tr = rng.standard_normal((1, 4, 3)), rng.standard_normal((1, 4, 3))
        rp = ReadProject(rng, 3, 2)
        rp.fc.bias.data[:] = 0
        rp.fc.weight.data[:] = np.vstack([np.eye(3), np.zeros((3, 3))])
        np.testing.assert_allclose(rp(seq(ti, (2, 2)), seq(tr, (2, 2))).data, gelu_ref(ti), rtol=1e-12)
        rp.fc.weight.data[:] = np.vstack([np.zeros((3, 3)), np.eye(3)])
        np.testing.assert_allclose(rp(seq(ti, (2, 2)), seq(tr, (2, 2))).data, gelu_ref(tr), rtol=1e-12)


def test_read_proj_random_weights_match_hand_oracle():
    rng = np.random.default_rng(1)
    with T.precision("float64"):
        rp = ReadProject(rng, 3, 2)
        rp.fc.bias.data[:] = rng.standard_normal(3)
        ti, tr = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        out = rp(seq(ti, (2, 2)), seq(tr, (2, 2))).data
    W, b = rp.fc.weight.data, rp.fc.bias.data
    ref = np.zeros((4, 3))
    for n in range(4):
        cat = np.concatenate([ti[n], tr[n]])
        for j in range(3):
            ref[n, j] = gelu_ref(sum(cat[k] * W[k, j] for k in range(6)) + b[j])
    np.testing.assert_allclose(out, ref, rtol=1e-10)


def test_read_proj_rejects_mismatched_grids():
    rng = np.random.default_rng(0)
    rp = ReadProject(rng, 4, 2)
    with pytest.raises(FusionError, match="grid"):
        rp(seq(np.zeros((1, 6, 4)), (2, 3)), seq(np.zeros((1, 4, 4)), (2, 2)))
    with pytest.raises(FusionError):
        rp(seq(np.zeros((1, 6, 4)), (2, 3)))


def test_read_proj_gradient_reaches_radar_tokens():
    rng = np.random.default_rng(2)
    rp = ReadProject(rng, 4, 2)
    tr = Tensor(rng.standard_normal((1, 4, 4)), requires_grad=True)
    T.backward(T.sum(rp(seq(rng.standard_normal((1, 4, 4)), (2, 2)), TokenSequence(tr, (2, 2)))), leaves=[tr])
    assert np.abs(tr.grad).sum() > 0


# --- spatial concatenate ----------------------------------------------------------------

def test_token_index_to_grid_position():
    tok = np.zeros((1, 36, 2))
    tok[0, 7] = [1.0, 2.0]
    grid = spatial_concatenate(Tensor(tok), (6, 6)).data
    assert grid.shape == (1, 6, 6, 2)
    assert grid[0, 1, 1].tolist() == [1.0, 2.0]
    assert np.count_nonzero(grid) == 2


@pytest.mark.parametrize("grid", [(2, 3), (6, 6), (4, 1)])
def test_concatenate_split_round_trip_bit_exact(grid):
    tok = np.random.default_rng(3).standard_normal((2, grid[0] * grid[1], 5)).astype(np.float32)
    back = spatial_split(spatial_concatenate(Tensor(tok), grid)).data
    assert back.tobytes() == tok.tobytes()


def test_concatenate_rejects_wrong_count():
    with pytest.raises(ConfigError):
        spatial_concatenate(Tensor(np.zeros((1, 5, 2))), (2, 3))


# --- Resample / shape contract --------------------------------------------------------------

def test_resample_examples():
    rng = np.random.default_rng(0)
    feat = Tensor(np.zeros((1, 6, 6, 8)))
    assert Resample(rng, 8, 32, 4, 8)(feat).shape == (1, 12, 12, 32)
    assert Resample(rng, 8, 32, 8, 8)(feat).shape == (1, 6, 6, 32)
    assert Resample(rng, 8, 32, 16, 8)(feat).shape == (1, 3, 3, 32)


def test_resample_at_full_scale_config():
    # 384x384, p=16, s=32 -> 12x12x256; only the shapes are exercised, on a single zero map
    rng = np.random.default_rng(0)
    r = Resample(rng, 4, 256, 32, 16)
    assert r(Tensor(np.zeros((1, 24, 24, 4)))).shape == (1, 12, 12, 256)
    assert ReassembleConfig.full().scales == (4, 8, 16, 32)


def shape_matrix():
    for H, W, p, s in itertools.product((32, 48, 96), (32, 48, 96), (8, 16), (4, 8, 16, 32)):
        try:
            check_scale(s, p, (H, W))
        except ConfigError:
            continue
        yield H, W, p, s


SHAPES = list(shape_matrix())


def test_shape_matrix_is_nontrivial():
    assert len(SHAPES) >= 40
    assert {p for *_, p, _ in SHAPES} == {8, 16} and {s for *_, s in SHAPES} == {4, 8, 16, 32}


@pytest.mark.parametrize("H,W,p,s", SHAPES)
def test_reassemble_output_shape(H, W, p, s):
    D, Dh = 4, 3
    rng = np.random.default_rng(H * W + p + s)
    cfg = ReassembleConfig(scales=(s,), out_dim=Dh, patch_size=p, image_size=(H, W))
    grid = (H // p, W // p)
    ti = rng.standard_normal((1, grid[0] * grid[1], D)).astype(np.float32)
    stage = ReassembleStage(rng, D, cfg, s, 2)
    out = stage(seq(ti, grid), seq(ti, grid))
    assert out.shape == (1, H // s, W // s, Dh)
    assert spatial_split(spatial_concatenate(Tensor(ti), grid)).data.tobytes() == ti.tobytes()


@pytest.mark.parametrize("s,p,size", [(3, 8, (48, 48)), (8, 8, (36, 48)), (32, 16, (48, 48))])
def test_incompatible_scale_is_rejected(s, p, size):
    with pytest.raises(ConfigError):
        check_scale(s, p, size)


# --- assembled models --------------------------------------------------------------------------

def test_parameter_count_ordering():
    n = {m: toy_model(m).num_parameters() for m in ALL_MODES}
    assert n[FusionMode.IMAGE_ONLY] < n[FusionMode.EARLY] < n[FusionMode.RCDPT] < n[FusionMode.LATE]


@pytest.mark.parametrize("mode", ALL_MODES)
def test_every_mode_returns_dense_nonnegative_depth(mode):
    model = toy_model(mode, init_depth=2.0)
    image, radar = random_inputs(0, batch=2)
    out = model.predict(image, radar)
    assert out.shape == (2, 16, 16, 1)
    assert np.all(out >= 0)


def test_fused_mode_without_radar_is_an_error():
    with pytest.raises(ConfigError, match="radar"):
        toy_model(FusionMode.RCDPT).predict(*random_inputs(0)[:1])


@pytest.mark.parametrize("mode", [FusionMode.RCDPT, FusionMode.EARLY])
def test_zero_radar_weights_reduce_to_image_only(mode):
    io = toy_model(FusionMode.IMAGE_ONLY, seed=3, init_depth=5.0).astype(np.float64)
    fused = toy_model(mode, seed=4, init_depth=5.0).astype(np.float64)
    for p in io.parameters():
        p.data += np.random.default_rng(p.size).normal(0, 0.05, p.shape)
    graft_image_branch(fused, io)
    image, radar = random_inputs(5)
    with T.precision("float64"):
        a = io.predict(image)
        b = fused.predict(image, radar)
    assert np.abs(a - b).max() < 1e-6
    assert a.std() > 0


def test_rcdpt_output_depends_on_radar():
    model = toy_model(FusionMode.RCDPT, init_depth=5.0)
    for p in model.parameters():
        p.data += np.random.default_rng(p.size).normal(0, 0.05, p.shape).astype(p.dtype)
    image, radar = random_inputs(1)
    assert not np.array_equal(model.predict(image, radar), model.predict(image, np.zeros_like(radar)))


def test_encoder_patch_size_must_match():
    enc, reasm = toy_configs()
    reasm = ReassembleConfig(scales=(4, 8, 16, 32), out_dim=4, patch_size=16, image_size=(32, 32))
    with pytest.raises(ConfigError, match="patch size"):
        build_model(FusionMode.RCDPT, enc, reasm)


@pytest.mark.parametrize("mode", ALL_MODES)
def test_checkpoint_round_trip(mode, tmp_path):
    model = toy_model(mode, seed=2, init_depth=3.0)
    for p in model.parameters():
        p.data += np.random.default_rng(p.size).normal(0, 0.05, p.shape).astype(p.dtype)
    save_checkpoint(model, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.mode is model.mode
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    image, radar = random_inputs(2)
    assert np.array_equal(model.predict(image, radar), back.predict(image, radar))


def test_gradients_reach_both_modality_branches():
    model = toy_model(FusionMode.RCDPT, init_depth=5.0)
    for p in model.parameters():
        p.data += np.random.default_rng(p.size).normal(0, 0.05, p.shape).astype(p.dtype)
    image, radar = random_inputs(3)
    T.backward(T.sum(model(image, radar)), leaves=model.parameters())
    norms = {}
    for name, p in model.named_parameters():
        branch = name.split(".")[0]
        norms[branch] = norms.get(branch, 0.0) + float(np.sum(p.grad.astype(np.float64) ** 2))
    assert norms["radar_encoder"] > 0 and norms["image_encoder"] > 0


@pytest.mark.parametrize("mode", ALL_MODES)
@pytest.mark.parametrize("size,p,scales", [((16, 32), 8, (2, 4, 8, 16)), ((48, 32), 8, (2, 4, 8, 16)),
                                           ((32, 64), 16, (4, 8, 16, 32))])
def test_end_to_end_spatial_contract(mode, size, p, scales):
    from rcdpt.encoder import EncoderConfig

    enc = EncoderConfig(patch_size=p, token_dim=8, num_layers=4, num_heads=2, mlp_ratio=2, tap_layers=(1, 2, 3, 4))
    reasm = ReassembleConfig(scales=scales, out_dim=4, patch_size=p, image_size=size)
    model = build_model(mode, enc, reasm, init_depth=1.0)
    rng = np.random.default_rng(0)
    out = model.predict(rng.random((1, *size, 3)), rng.random((1, *size, 3)))
    assert out.shape == (1, *size, 1) and np.all(out >= 0)
