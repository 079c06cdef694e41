"""Synthetic camera / radar / lidar scenes, augmentation, and on-disk datasets."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rten
from .config import format_kv, parse_kv
from .encoder import ConfigError

GENERATOR_VERSION = "1"
MAX_DEPTH = 80.0
RADAR_SIGMA = 0.5


@dataclass
class SceneSample:
    image: np.ndarray  # [H, W, 3] in [0, 1]
    radar: np.ndarray  # [H, W, C_R] meters, 0 = no return
    lidar_gt: np.ndarray  # [H, W] meters, 0 = no return
    dense_depth: np.ndarray  # [H, W] meters

    @property
    def size(self) -> tuple[int, int]:
        return self.dense_depth.shape

    def flipped(self) -> "SceneSample":
        return SceneSample(*(np.ascontiguousarray(a[:, ::-1]) for a in
                             (self.image, self.radar, self.lidar_gt, self.dense_depth)))


def scene_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def gen_scene(seed: int, H: int = 48, W: int = 48, radar_channels: int = 3, multiple: int = 1) -> SceneSample:
    """Procedural road scene with objects at random depths.

    Object albedo is random, so the image shows *where* objects are but not
    how far away they are; radar returns on each object carry that.
    """
    if H % multiple or W % multiple:
        raise ConfigError(f"scene {H}x{W} is not divisible by {multiple}")
    rng = np.random.default_rng(seed)
    rows = np.arange(H)[:, None] * np.ones((1, W))
    cols = np.ones((H, 1)) * np.arange(W)[None, :]

    horizon = rng.uniform(0.35, 0.4) * H
    far = rng.uniform(70.0, 78.0)
    near = rng.uniform(4.0, 5.0)
    k = near * (H - 1 - horizon)
    below = rows > horizon + k / far
    depth = np.full((H, W), far)
    depth[below] = k / (rows[below] - horizon)
    depth = np.clip(depth, near, far)

    sky = rng.uniform(0.5, 0.9, size=3)
    road = rng.uniform(0.25, 0.55) * np.ones(3) + rng.uniform(-0.05, 0.05, size=3)
    albedo = np.where(below[..., None], road, sky)
    ids = np.zeros((H, W), dtype=int)

    n_obj = int(rng.integers(2, 7))
    obj_depths = _separated_depths(rng, n_obj, 2.0, 60.0, 5.0)
    for oid, d in sorted(enumerate(obj_depths, start=1), key=lambda t: -t[1]):
        h = rng.uniform(0.15, 0.45) * H
        w = rng.uniform(0.12, 0.4) * W
        cy = rng.uniform(horizon, H - h / 4)
        cx = rng.uniform(0, W)
        if rng.random() < 0.5:
            shape = (np.abs(rows - (cy - h / 2)) <= h / 2) & (np.abs(cols - cx) <= w / 2)
        else:
            shape = ((rows - (cy - h / 2)) / (h / 2)) ** 2 + ((cols - cx) / (w / 2)) ** 2 <= 1.0
        depth[shape] = d
        albedo[shape] = rng.uniform(0.15, 1.0, size=3)
        ids[shape] = oid

    shade = 0.45 + 0.55 * np.exp(-depth / 40.0)
    image = albedo * shade[..., None] + rng.normal(0.0, 0.02, size=(H, W, 3))
    image = np.clip(image, 0.0, 1.0)

    lidar = _scan_lidar(rng, depth)
    radar = _radar_returns(rng, depth, ids, radar_channels)
    return SceneSample(image.astype(np.float32), radar.astype(np.float32),
                       lidar.astype(np.float32), depth.astype(np.float32))


def _separated_depths(rng, n, lo, hi, gap):
    out: list[float] = []
    while len(out) < n:
        d = rng.uniform(lo, hi)
        if all(abs(d - o) >= gap for o in out):
            out.append(d)
    return out


def _scan_lidar(rng, depth, row_step: int = 4, keep: float = 0.2):
    """Jittered scanlines: one candidate row per band per column, thinned randomly."""
    H, W = depth.shape
    lidar = np.zeros_like(depth)
    phase = int(rng.integers(0, row_step))
    for base in range(phase, H, row_step):
        jitter = rng.integers(-1, 2, size=W)
        r = np.clip(base + jitter, 0, H - 1)
        take = rng.random(W) < keep
        lidar[r[take], np.arange(W)[take]] = depth[r[take], np.arange(W)[take]]
    return lidar


def _radar_returns(rng, depth, ids, channels):
    H, W = depth.shape
    n_min = max(1, int(np.ceil(0.001 * H * W)))
    n_max = max(n_min, int(np.floor(0.01 * H * W)))
    hits: list[tuple[int, int]] = []
    for oid in range(1, ids.max() + 1):
        ys, xs = np.nonzero(ids == oid)
        if ys.size == 0:
            continue
        # radar sees the lower half of an object
        low = ys >= (ys.min() + ys.max()) / 2
        ys, xs = ys[low], xs[low]
        # about one return per three columns of visible width
        width = np.unique(xs).size
        for j in rng.choice(ys.size, size=min(ys.size, int(np.clip(round(width / 3), 2, 6))), replace=False):
            hits.append((int(ys[j]), int(xs[j])))
    ys, xs = np.nonzero(ids == 0)
    for j in rng.choice(ys.size, size=int(rng.integers(0, 3)), replace=False):
        hits.append((int(ys[j]), int(xs[j])))
    order = rng.permutation(len(hits))
    hits = [hits[i] for i in order][:n_max]
    while len(hits) < n_min:
        hits.append((int(rng.integers(0, H)), int(rng.integers(0, W))))

    extents = [round(c * H / 8) for c in range(channels)]
    radar = np.zeros((H, W, channels))
    values = [float(np.clip(depth[y, x] + rng.normal(0.0, RADAR_SIGMA), 0.1, MAX_DEPTH)) for y, x in hits]
    # far first so nearer returns win where extensions overlap
    for (y, x), v in sorted(zip(hits, values), key=lambda t: -t[1]):
        for c, ext in enumerate(extents):
            radar[max(0, y - ext):y + 1, x, c] = v
    return radar


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def photometric(image: np.ndarray, gamma: float, brightness: float, color) -> np.ndarray:
    out = np.power(image, gamma) * brightness * np.asarray(color, dtype=np.float64)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment(image: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Random gamma, brightness and per-channel color in (0.9, 1.1), then a 50% horizontal flip."""
    gamma = rng.uniform(0.9, 1.1)
    brightness = rng.uniform(0.9, 1.1)
    color = rng.uniform(0.9, 1.1, size=3)
    flip = bool(rng.random() < 0.5)
    out = photometric(image, gamma, brightness, color)
    if flip:
        out = np.ascontiguousarray(out[:, ::-1])
    return out, flip


def augment_sample(sample: SceneSample, rng: np.random.Generator) -> SceneSample:
    image, flip = augment(sample.image, rng)
    if flip:
        sample = sample.flipped()
    return SceneSample(image, sample.radar, sample.lidar_gt, sample.dense_depth)


# ---------------------------------------------------------------------------
# on-disk layout
# ---------------------------------------------------------------------------

_FILES = {"image": "image.rten", "radar": "radar.rten", "lidar_gt": "lidar.rten", "dense_depth": "depth.rten"}


def write_sample(directory: str | os.PathLike, sample: SceneSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for attr, name in _FILES.items():
        rten.save(d / name, getattr(sample, attr))


def read_sample(directory: str | os.PathLike) -> SceneSample:
    d = Path(directory)
    arrays = {}
    for attr, name in _FILES.items():
        path = d / name
        if not path.exists():
            raise FileNotFoundError(f"missing sensor file {path}")
        arrays[attr] = rten.load(path)
    return SceneSample(**arrays)


class Dataset:
    """Sorted ``scene_%06d`` directories under ``root``; samples load lazily and are cached."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"dataset directory {self.root} does not exist")
        self.paths = sorted(p for p in self.root.iterdir() if p.is_dir() and p.name.startswith("scene_"))
        self._cache: dict[int, SceneSample] = {}
        manifest = self.root / "manifest.txt"
        self.manifest = parse_kv(manifest.read_text()) if manifest.exists() else {}

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> SceneSample:
        if i not in self._cache:
            self._cache[i] = read_sample(self.paths[i])
        return self._cache[i]

    def __iter__(self) -> Iterator[SceneSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def size(self) -> tuple[int, int] | None:
        return self[0].size if len(self) else None

    @property
    def radar_channels(self) -> int | None:
        return self[0].radar.shape[-1] if len(self) else None


def split_dir(root: str | os.PathLike, split: str) -> Path:
    """``root/split`` when present, otherwise ``root`` itself."""
    root = Path(root)
    return root / split if (root / split).is_dir() else root


def write_dataset(root: str | os.PathLike, n: int, size: int, seed: int, radar_channels: int = 3,
                  first_index: int = 0) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        idx = first_index + i
        write_sample(root / f"scene_{idx:06d}", gen_scene(scene_seed(seed, idx), size, size, radar_channels))
    (root / "manifest.txt").write_text(format_kv({
        "samples": n, "height": size, "width": size, "radar_channels": radar_channels,
        "generator_version": GENERATOR_VERSION, "global_seed": seed, "first_index": first_index,
    }))
    return root
