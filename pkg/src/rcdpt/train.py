"""Training, evaluation and the four-way fusion comparison."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig, format_kv
from .data import Dataset, SceneSample, augment_sample
from .encoder import ConfigError
from .losses import CSV_HEADER, MetricsAccumulator, MetricsReport, total_loss, valid_mask
from .model import DepthModel, build_model, save_checkpoint
from .optim import SGD, lr_schedule
from .reassemble import FusionMode

log = logging.getLogger(__name__)

COMPARE_ORDER = (FusionMode.IMAGE_ONLY, FusionMode.EARLY, FusionMode.LATE, FusionMode.RCDPT)


class TrainingError(RuntimeError):
    """Training diverged."""


@dataclass
class TrainResult:
    model: DepthModel
    log: list[tuple[int, int, float, float]] = field(default_factory=list)  # epoch, step, lr, loss
    epoch_loss: list[float] = field(default_factory=list)
    seconds: float = 0.0


def make_model(cfg: TrainConfig) -> DepthModel:
    return build_model(cfg.mode, cfg.encoder_config(), cfg.reassemble_config(), radar_channels=cfg.radar_channels,
                       seed=cfg.seed, depth_scale=cfg.depth_scale, init_depth=cfg.init_depth)


def batch_arrays(samples: list[SceneSample]):
    return (np.stack([s.image for s in samples]), np.stack([s.radar for s in samples]),
            np.stack([s.lidar_gt for s in samples]), np.stack([s.dense_depth for s in samples]))


def epoch_batches(cfg: TrainConfig, n: int, epoch: int) -> list[np.ndarray]:
    """Per-epoch permutation derived from the seed alone, shared by every mode."""
    order = np.random.default_rng([cfg.seed, epoch, 0x5EED]).permutation(n)
    return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def load_batch(cfg: TrainConfig, data: Dataset, idx: np.ndarray, epoch: int) -> list[SceneSample]:
    samples = []
    for i in idx:
        s = data[int(i)]
        if cfg.augment:
            s = augment_sample(s, np.random.default_rng([cfg.seed, int(i), epoch]))
        samples.append(s)
    return samples


def check_compat(cfg: TrainConfig, data: Dataset) -> None:
    if len(data) == 0:
        raise ConfigError(f"dataset {data.root} is empty")
    if data.size != (cfg.size, cfg.size):
        raise ConfigError(f"dataset scenes are {data.size}, config expects {(cfg.size, cfg.size)}")
    if data.radar_channels != cfg.radar_channels:
        raise ConfigError(f"dataset has {data.radar_channels} radar channels, config expects {cfg.radar_channels}")


def train(cfg: TrainConfig, data: Dataset, out_dir: str | os.PathLike | None = None) -> TrainResult:
    """SGD with polynomial decay on masked L1 + edge-aware smoothness."""
    check_compat(cfg, data)
    t0 = time.perf_counter()
    model = make_model(cfg)
    opt = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    max_steps = cfg.epochs * steps_per_epoch
    result = TrainResult(model)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_kv(cfg.to_dict()))
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in epoch_batches(cfg, len(data), epoch):
            image, radar, lidar, _ = batch_arrays(load_batch(cfg, data, idx, epoch))
            lr = lr_schedule(step, max_steps, cfg.lr0, cfg.lr_power)
            pred = model(image, radar)
            mask = valid_mask(lidar, cfg.depth_cap)
            loss = total_loss(pred, lidar, image, mask, cfg.w_l1, cfg.w_smooth)
            value = loss.data.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch + 1}, step {step} (lr={lr:.3e})")
            T.backward(loss, leaves=model.parameters())
            opt.step(lr)
            result.log.append((epoch + 1, step, lr, value))
            losses.append(value)
            step += 1
        result.epoch_loss.append(float(np.mean(losses)))
        log.info("%s epoch %d/%d loss %.4f", cfg.mode.value, epoch + 1, cfg.epochs, result.epoch_loss[-1])
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, out / f"checkpoint_epoch{epoch + 1:03d}")
    result.seconds = time.perf_counter() - t0
    if out is not None:
        save_checkpoint(model, out / "checkpoint")
        write_train_log(out / "train_log.csv", result.log)
    return result


def write_train_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "lr", "loss"])
        for epoch, step, lr, loss in rows:
            w.writerow([epoch, step, repr(lr), repr(loss)])


def predict_dataset(model: DepthModel, data: Dataset, batch_size: int = 8) -> list[np.ndarray]:
    preds = []
    for start in range(0, len(data), batch_size):
        samples = [data[i] for i in range(start, min(len(data), start + batch_size))]
        image, radar, _, _ = batch_arrays(samples)
        preds.extend(model.predict(image, radar)[..., 0])
    return preds


def evaluate(model: DepthModel, data: Dataset, target: str = "lidar", absrel_denominator: str = "target",
             depth_cap: float = 80.0, preds: list[np.ndarray] | None = None) -> MetricsReport:
    """Pixel-weighted metrics against sparse lidar (default) or the dense synthetic depth."""
    if data.size != tuple(model.image_size):
        raise ConfigError(f"checkpoint expects {model.image_size} inputs, dataset has {data.size}")
    if data.radar_channels != model.radar_channels:
        raise ConfigError(f"checkpoint expects {model.radar_channels} radar channels, dataset has {data.radar_channels}")
    preds = predict_dataset(model, data) if preds is None else preds
    acc = MetricsAccumulator()
    for pred, sample in zip(preds, data):
        gt = sample.lidar_gt if target == "lidar" else sample.dense_depth
        acc.add(pred, gt, absrel_denominator=absrel_denominator, depth_cap=depth_cap)
    return acc.report()


def write_metrics_csv(path, rows: list[tuple[str, int, MetricsReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for mode, seed, rep in rows:
            w.writerow(rep.as_row(mode, seed))


@dataclass
class CompareRun:
    mode: FusionMode
    seed: int
    report: MetricsReport
    dense_report: MetricsReport
    epoch_loss: list[float]
    seconds: float


def compare(base: TrainConfig, seeds: list[int], train_data: Dataset, eval_data: Dataset,
            out_dir: str | os.PathLike, modes=COMPARE_ORDER, save_checkpoints: bool = False) -> list[CompareRun]:
    """Train every mode on every seed with identical data streams and collect metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        for mode in modes:
            cfg = dataclasses.replace(base, mode=mode, seed=seed)
            run_dir = out / "runs" / f"{mode.value}_seed{seed}" if save_checkpoints else None
            res = train(cfg, train_data, run_dir)
            preds = predict_dataset(res.model, eval_data)
            rep = evaluate(res.model, eval_data, preds=preds)
            dense = evaluate(res.model, eval_data, target="dense", preds=preds)
            log.info("compare %s seed %d rmse %.3f (%.0fs)", mode.value, seed, rep.rmse, res.seconds)
            runs.append(CompareRun(mode, seed, rep, dense, res.epoch_loss, res.seconds))
    write_metrics_csv(out / "per_seed.csv", [(r.mode.value, r.seed, r.report) for r in runs])
    write_metrics_csv(out / "per_seed_dense.csv", [(r.mode.value, r.seed, r.dense_report) for r in runs])
    write_comparison_table(out / "comparison.csv", runs, modes)
    with open(out / "epoch_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "seed", "epoch", "loss"])
        for r in runs:
            for epoch, loss in enumerate(r.epoch_loss, start=1):
                w.writerow([r.mode.value, r.seed, epoch, repr(loss)])
    return runs


TABLE_METRICS = ("delta1", "delta2", "delta3", "rmse", "absrel")


def summarize(runs: list[CompareRun], modes=COMPARE_ORDER, dense: bool = False) -> list[dict]:
    rows = []
    for mode in modes:
        reps = [(r.dense_report if dense else r.report) for r in runs if r.mode is mode]
        if not reps:
            continue
        row = {"mode": mode.value, "n_seeds": len(reps)}
        for m in TABLE_METRICS:
            vals = np.array([getattr(rep, m) for rep in reps])
            row[m + "_mean"] = float(vals.mean())
            row[m + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def write_comparison_table(path, runs, modes=COMPARE_ORDER) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "n_seeds"] + [f"{m}_{s}" for m in TABLE_METRICS for s in ("mean", "std")])
        for row in summarize(runs, modes):
            w.writerow([row["mode"], row["n_seeds"]]
                       + [repr(row[f"{m}_{s}"]) for m in TABLE_METRICS for s in ("mean", "std")])
