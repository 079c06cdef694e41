"""Figures and depth images written next to the CSV outputs."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DEPTH_VMAX = 80.0
_PNG_META = {"Software": None}

_MODE_COLORS = {
    "image-only": "#7f7f7f",
    "early": "#1f77b4",
    "late": "#ff7f0e",
    "rcdpt-reassemble": "#2ca02c",
}


def write_pgm16(path: str | os.PathLike, depth: np.ndarray, vmax: float = DEPTH_VMAX) -> None:
    """Binary 16-bit PGM with 0 m -> 0 and ``vmax`` m -> 65535 (values clipped)."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3 and d.shape[-1] == 1:
        d = d[..., 0]
    if d.ndim != 2:
        raise ValueError(f"depth image must be 2-D, got shape {d.shape}")
    q = np.rint(np.clip(d / vmax, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm16(path: str | os.PathLike, vmax: float = DEPTH_VMAX) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise ValueError(f"{path} is not a 16-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    q = np.frombuffer(parts[4][: 2 * w * h], dtype=">u2").reshape(h, w)
    return q.astype(np.float64) / 65535.0 * vmax


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_comparison(summary: Sequence[dict], path: str | os.PathLike) -> Path:
    """RMSE and delta1 per mode, mean with std error bars across seeds."""
    modes = [row["mode"] for row in summary]
    colors = [_MODE_COLORS.get(m, "#555555") for m in modes]
    x = np.arange(len(modes))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, key, label in ((axes[0], "rmse", "RMSE [m] (lower is better)"),
                           (axes[1], "delta1", r"$\delta_1$ (higher is better)")):
        mean = [row[f"{key}_mean"] for row in summary]
        std = [row[f"{key}_std"] for row in summary]
        ax.bar(x, mean, yerr=std, color=colors, capsize=4)
        ax.set_xticks(x, modes, rotation=20, ha="right")
        ax.set_ylabel(label)
        lo = min(m - s for m, s in zip(mean, std))
        hi = max(m + s for m, s in zip(mean, std))
        pad = 0.15 * (hi - lo) if hi > lo else 0.1 * abs(hi) + 1e-3
        ax.set_ylim(max(0.0, lo - pad), hi + pad)
        ax.grid(axis="y", alpha=0.3)
    n = summary[0]["n_seeds"] if summary else 0
    fig.suptitle(f"Fusion comparison over {n} seed(s)")
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_curves(curves: dict[str, Sequence[float]], path: str | os.PathLike) -> Path:
    """Mean training loss per epoch, one line per label."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, values in curves.items():
        mode = label.split(" ")[0]
        ax.plot(np.arange(1, len(values) + 1), values, label=label, color=_MODE_COLORS.get(mode), alpha=0.85)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def plot_depth_examples(images, radars, preds, targets, path: str | os.PathLike, vmax: float = DEPTH_VMAX,
                        max_rows: int = 4) -> Path:
    """Per row: image, strongest radar channel, prediction, reference depth."""
    n = min(len(images), max_rows)
    fig, axes = plt.subplots(n, 4, figsize=(8, 2.1 * n), squeeze=False)
    titles = ("image", "radar", "prediction", "reference")
    cmap = plt.get_cmap("magma_r").copy()
    cmap.set_bad("#d9d9d9")  # no radar return
    for r in range(n):
        radar = np.max(radars[r], axis=-1)
        panels = (np.clip(images[r], 0, 1), np.where(radar > 0, radar, np.nan), np.squeeze(preds[r]),
                  np.squeeze(targets[r]))
        for c, panel in enumerate(panels):
            ax = axes[r, c]
            if c == 0:
                ax.imshow(panel)
            else:
                ax.imshow(panel, cmap=cmap, vmin=0.0, vmax=vmax, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(titles[c], fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
