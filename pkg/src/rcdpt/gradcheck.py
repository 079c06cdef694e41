"""Finite-difference audit of every primitive and of one tiny model per fusion mode."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .data import gen_scene
from .encoder import EncoderConfig
from .losses import total_loss, valid_mask
from .model import build_model
from .reassemble import FusionMode, ReassembleConfig
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    kind: str  # "primitive" or "model"
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _away_from_zero(rng, shape, margin=0.2):
    u = rng.standard_normal(shape)
    return np.sign(u) * (margin + np.abs(u))


def _weighted(fn: Callable[..., Tensor], out_shape, rng) -> Callable[..., Tensor]:
    """Scalarise ``fn`` through a fixed random projection so every output element matters."""
    w = Tensor(rng.standard_normal(out_shape))
    return lambda *xs: T.sum(fn(*xs) * w)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[Tensor]]]:
    """name -> (scalar function, inputs). Must be built under float64 precision."""
    r = lambda *s: Tensor(rng.standard_normal(s))  # noqa: E731
    cases: dict[str, tuple[Callable, list[Tensor]]] = {}

    def add_case(name, fn, inputs):
        out = fn(*inputs)
        cases[name] = (_weighted(fn, out.shape, rng), inputs)

    add_case("matmul", T.matmul, [r(3, 4), r(4, 2)])
    add_case("add", T.add, [r(2, 3), r(3)])
    add_case("mul", T.mul, [r(2, 3), r(2, 3)])
    add_case("concat", lambda a, b: T.concat([a, b], axis=1), [r(2, 3), r(2, 2)])
    add_case("reshape", lambda a: T.reshape(a, (3, 4)), [r(2, 6)])
    add_case("transpose", lambda a: T.transpose(a, (2, 0, 1)), [r(2, 3, 4)])
    add_case("softmax", T.softmax, [r(3, 5)])
    add_case("gelu", T.gelu, [r(4, 3)])
    add_case("relu", T.relu, [Tensor(_away_from_zero(rng, (4, 3)))])
    add_case("exp", T.exp, [r(3, 3)])
    add_case("abs", T.abs, [Tensor(_away_from_zero(rng, (4, 3)))])
    add_case("mean", lambda a: T.mean(a, axis=1), [r(3, 4)])
    add_case("sum", lambda a: T.sum(a, axis=0), [r(3, 4)])
    add_case("layernorm", lambda a, g, b: T.layernorm(a, g, b), [r(3, 5), r(5), r(5)])
    add_case("conv2d", lambda a, w, b: T.conv2d(a, w, b, stride=2, padding=1), [r(1, 5, 5, 2), r(3, 3, 2, 3), r(3)])
    add_case("conv_transpose2d", lambda a, w, b: T.conv_transpose2d(a, w, b, stride=2),
             [r(1, 3, 3, 2), r(2, 2, 2, 3), r(3)])
    add_case("upsample_bilinear", lambda a: T.upsample_bilinear(a, 2), [r(1, 3, 4, 2)])
    add_case("spatial_gradient", lambda a: T.spatial_gradient(a, axis=-1), [r(4, 5)])
    return cases


# 1e-6 lets roundoff swamp near-zero gradient entries, 1e-4 lets curvature
# (layernorm) show through; 2e-5 sits between the two
PRIMITIVE_EPS = 2e-5


def check_primitives(seed: int = 0, eps: float = PRIMITIVE_EPS, cases=None) -> list[CheckResult]:
    out = []
    with T.precision("float64"):
        cases = cases if cases is not None else primitive_cases(np.random.default_rng(seed))
        for name, (fn, inputs) in cases.items():
            out.append(CheckResult(name, "primitive", T.grad_check(fn, inputs, eps=eps), PRIMITIVE_TOL))
    return out


def tiny_model(mode: FusionMode, seed: int = 0, size: int = 16, jitter: float = 0.2):
    """Small model moved to a generic parameter point.

    Zero biases and near-uniform attention at init put many units exactly on a
    ReLU kink or leave gradients at the roundoff level, so every parameter is
    jittered by N(0, ``jitter``) before checking.
    """
    enc = EncoderConfig(patch_size=8, token_dim=8, num_layers=4, num_heads=2, mlp_ratio=2, tap_layers=(1, 2, 3, 4))
    reasm = ReassembleConfig(scales=(2, 4, 8, 16), out_dim=4, patch_size=8, image_size=(size, size))
    model = build_model(mode, enc, reasm, radar_channels=3, seed=seed, depth_scale=1.0, init_depth=2.0)
    rng = np.random.default_rng([seed, 99])
    for p in model.parameters():
        p.data += rng.standard_normal(p.shape) * jitter
    return model


def _near_target(pred: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Target 0.05 to 0.2 away from ``pred``: small loss, L1 kinks out of reach of the probe."""
    off = rng.uniform(0.05, 0.2, pred.shape) * rng.choice([-1.0, 1.0], pred.shape)
    return np.where(pred > 0.3, pred + off, pred + np.abs(off))


def check_model(mode: FusionMode, seed: int = 0, eps: float = 1e-5, per_tensor: int = 2) -> CheckResult:
    """Total loss on a 16x16 scene against sampled elements of every parameter tensor."""
    with T.precision("float64"):
        model = tiny_model(mode, seed)
        scene = gen_scene(seed, 16, 16)
        image = scene.image.astype(np.float64)[None]
        radar = scene.radar.astype(np.float64)[None]
        rng = np.random.default_rng([seed, 7])
        target = _near_target(model.predict(image, radar)[..., 0], rng)
        mask = valid_mask(target)
        params = model.parameters()
        picks = {k: rng.choice(p.size, size=min(per_tensor, p.size), replace=False) for k, p in enumerate(params)}

        def f(*_):
            return total_loss(model(image, radar), target, image, mask)

        err = T.grad_check(f, params, eps=eps, indices=picks)
    return CheckResult(f"model:{mode.value}", "model", err, MODEL_TOL)


def run_all(seed: int = 0) -> list[CheckResult]:
    results = check_primitives(seed)
    for mode in (FusionMode.IMAGE_ONLY, FusionMode.EARLY, FusionMode.LATE, FusionMode.RCDPT):
        results.append(check_model(mode, seed))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':28s} {'max rel err':>12s} {'tol':>8s}  status"]
    for r in results:
        lines.append(f"{r.name:28s} {r.max_rel_error:12.3e} {r.tolerance:8.0e}  {'PASS' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks, {n_fail} failed")
    return "\n".join(lines)
