"""Training objective and depth evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEPTH_CAP = 80.0
DELTA_BASE = 1.25
PRED_FLOOR = 1e-3
W_L1 = 1.0
W_SMOOTH = 0.1


class EmptyMaskError(ValueError):
    """No valid ground-truth pixel in the evaluated sample."""


def valid_mask(target: np.ndarray, depth_cap: float = DEPTH_CAP) -> np.ndarray:
    """Pixels with a return inside the evaluation range."""
    target = np.asarray(target)
    return (target > 0) & (target <= depth_cap)


def _squeeze_channel(y: Tensor) -> Tensor:
    if y.ndim >= 3 and y.shape[-1] == 1:
        return T.reshape(y, y.shape[:-1])
    return y


def l1_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute error over valid pixels."""
    pred = _squeeze_channel(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    m = valid_mask(target) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise EmptyMaskError("l1_loss: mask selects no pixels")
    err = T.abs(pred - Tensor(target, dtype=pred.dtype))
    return T.sum(err * Tensor(m, dtype=pred.dtype)) * (1.0 / count)


def image_edge_weights(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(-|dI|) along u (columns) and v (rows), channel-averaged; last col/row of dI is 0."""
    image = np.asarray(image)
    du = np.zeros(image.shape[:-1])
    dv = np.zeros(image.shape[:-1])
    du[..., :, :-1] = np.abs(np.diff(image, axis=-2)).mean(axis=-1)
    dv[..., :-1, :] = np.abs(np.diff(image, axis=-3)).mean(axis=-1)
    return np.exp(-du), np.exp(-dv)


def smoothness_loss(pred: Tensor, image: np.ndarray) -> Tensor:
    """Edge-aware smoothness, averaged over all pixels."""
    pred = _squeeze_channel(pred)
    image = np.asarray(image)
    if image.shape[:-1] != pred.shape:
        raise ValueError(f"image shape {image.shape} does not match prediction {pred.shape}")
    wu, wv = image_edge_weights(image)
    gu = T.abs(T.spatial_gradient(pred, axis=-1))
    gv = T.abs(T.spatial_gradient(pred, axis=-2))
    dt = pred.dtype
    return T.mean(gu * Tensor(wu, dtype=dt) + gv * Tensor(wv, dtype=dt))


def total_loss(pred: Tensor, target: np.ndarray, image: np.ndarray, mask: np.ndarray | None = None,
               w_l1: float = W_L1, w_smooth: float = W_SMOOTH) -> Tensor:
    loss = l1_loss(pred, target, mask) * w_l1
    if w_smooth:
        loss = loss + smoothness_loss(pred, image) * w_smooth
    return loss


@dataclass
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    rmse: float
    absrel: float
    n_pixels: int

    FIELDS = ("delta1", "delta2", "delta3", "rmse", "absrel", "n_pixels")

    def as_row(self, mode: str, seed: int) -> list[str]:
        return [mode, str(seed)] + [repr(float(getattr(self, f))) for f in self.FIELDS[:-1]] + [str(self.n_pixels)]


CSV_HEADER = ["mode", "seed", *MetricsReport.FIELDS]


class MetricsAccumulator:
    """Pixel-weighted aggregation of per-sample metrics."""

    def __init__(self):
        self.n = 0
        self.hits = np.zeros(3)
        self.sq = 0.0
        self.rel = 0.0
        self.skipped = 0

    def add(self, pred, target, mask=None, absrel_denominator: str = "target", depth_cap: float = DEPTH_CAP):
        try:
            stats = _metric_sums(pred, target, mask, absrel_denominator, depth_cap)
        except EmptyMaskError:
            self.skipped += 1
            return
        n, hits, sq, rel = stats
        self.n += n
        self.hits += hits
        self.sq += sq
        self.rel += rel

    def report(self) -> MetricsReport:
        if self.n == 0:
            raise EmptyMaskError("no valid pixels in any evaluated sample")
        d = self.hits / self.n
        return MetricsReport(float(d[0]), float(d[1]), float(d[2]), float(np.sqrt(self.sq / self.n)),
                             float(self.rel / self.n), int(self.n))


def _metric_sums(pred, target, mask, absrel_denominator, depth_cap):
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape and pred.shape[-1:] == (1,):
        pred = pred[..., 0]
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    m = valid_mask(target, depth_cap)
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMaskError("compute_metrics: mask selects no pixels")
    y = np.clip(pred[m], PRED_FLOOR, depth_cap)
    t = target[m]
    ratio = np.maximum(t / y, y / t)
    hits = np.array([(ratio < DELTA_BASE ** n).sum() for n in (1, 2, 3)], dtype=np.float64)
    if absrel_denominator == "target":
        denom = t
    elif absrel_denominator == "prediction":
        denom = y
    else:
        raise ValueError(f"absrel denominator must be 'target' or 'prediction', got {absrel_denominator!r}")
    return int(m.sum()), hits, float(((y - t) ** 2).sum()), float((np.abs(y - t) / denom).sum())


def compute_metrics(pred, target, mask=None, absrel_denominator: str = "target",
                    depth_cap: float = DEPTH_CAP) -> MetricsReport:
    """delta_n, RMSE and AbsRel over valid pixels.

    Predictions are clamped to [1e-3, depth_cap] before every metric. The
    valid set is ``0 < target <= depth_cap``, intersected with ``mask``.
    """
    acc = MetricsAccumulator()
    n, hits, sq, rel = _metric_sums(pred, target, mask, absrel_denominator, depth_cap)
    acc.n, acc.hits, acc.sq, acc.rel = n, hits, sq, rel
    return acc.report()
