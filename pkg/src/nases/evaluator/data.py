"""Image data: CIFAR-10 binary batches, a synthetic stand-in, normalization and augmentation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import NumericError

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"


class FormatError(ValueError):
    pass


def parse_cifar_records(data: bytes):
    """Decode raw CIFAR-10 binary records into (uint8 images (N, 3, 32, 32), uint8 labels)."""
    if len(data) % RECORD_BYTES:
        raise FormatError(f"{len(data)} bytes is not a whole number of {RECORD_BYTES}-byte records")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].copy()
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"record {bad} has label {labels[bad]} > 9")
    return raw[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def load_cifar_binary(path):
    """Load one batch file, or every training batch when given a directory."""
    path = Path(path)
    files = [path / f for f in TRAIN_FILES] if path.is_dir() else [path]
    xs, ys = [], []
    for f in files:
        if not f.is_file():
            raise FormatError(f"missing CIFAR-10 file {f}")
        x, y = parse_cifar_records(f.read_bytes())
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def take_per_class(images, labels, k: int):
    """First ``k`` images of each class, preserving file order."""
    keep = np.zeros(labels.shape, dtype=bool)
    for c in np.unique(labels):
        keep[np.flatnonzero(labels == c)[:k]] = True
    return images[keep], labels[keep]


def synthetic_blobs(n: int, classes: int = 10, seed: int = 0, size: int = 32):
    """Seeded Gaussian-blob images with the CIFAR loader's output types.

    Each class has a colour and a blob centre; every image is that blob,
    jittered by a few pixels, over Gaussian background noise.
    """
    proto = np.random.default_rng(12345)  # class prototypes are fixed across seeds
    colors = proto.uniform(-1.0, 1.0, size=(classes, 3))
    centres = proto.uniform(8, size - 8, size=(classes, 2))
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size]
    c = centres[labels] + rng.uniform(-3, 3, size=(n, 2))
    d2 = (yy[None] - c[:, 0, None, None]) ** 2 + (xx[None] - c[:, 1, None, None]) ** 2
    blob = np.exp(-d2 / (2 * 5.0**2))
    img = 128 + 90 * colors[labels][:, :, None, None] * blob[:, None] + rng.normal(0, 30, (n, 3, size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels.astype(np.uint8)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def channel_stats(images) -> NormStats:
    x = np.asarray(images, dtype=np.float64)
    std = x.std(axis=(0, 2, 3))
    if np.any(std == 0):
        raise NumericError(f"channel(s) {np.flatnonzero(std == 0).tolist()} have zero variance")
    return NormStats(x.mean(axis=(0, 2, 3)), std)


def normalize(images, stats: NormStats | None = None):
    """Per-channel standardization; returns (normalized float images, stats used)."""
    stats = stats or channel_stats(images)
    x = np.asarray(images, dtype=np.float64)
    return (x - stats.mean[None, :, None, None]) / stats.std[None, :, None, None], stats


def augment(batch, rng, pad: int = 4, cutout: int = 0, flip=None, offsets=None):
    """Pad-and-crop, horizontal flip and optional cutout, per image.

    ``flip`` (bool array) and ``offsets`` ((N, 2) ints) force the random
    choices, which the tests use.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if offsets is None:
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    if flip is None:
        flip = rng.random(n) < 0.5
    out = np.empty_like(batch)
    for i in range(n):
        oy, ox = offsets[i]
        img = padded[i, :, oy : oy + h, ox : ox + w]
        out[i] = img[:, :, ::-1] if flip[i] else img
    if cutout:
        centres = rng.integers(0, [h, w], size=(n, 2))
        half = cutout // 2
        for i, (cy, cx) in enumerate(centres):
            y0, y1 = max(0, cy - half), min(h, cy - half + cutout)
            x0, x1 = max(0, cx - half), min(w, cx - half + cutout)
            out[i, :, y0:y1, x0:x1] = 0.0
    return out


@dataclass
class DatasetSplit:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    split_seed: int
    stats: NormStats | None = None

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_y), len(self.val_y), len(self.test_y)


def split(images, labels, ratio: float = 0.9, seed: int = 0):
    """Seeded permutation split of a pool into (train_x, train_y, val_x, val_y)."""
    n = len(labels)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    tr, va = perm[:n_train], perm[n_train:]
    return images[tr], labels[tr], images[va], labels[va]


def make_split(pool_x, pool_y, test_x, test_y, ratio=0.9, seed=0) -> DatasetSplit:
    """Split the pool and normalize every part with training-set statistics."""
    tx, ty, vx, vy = split(pool_x, pool_y, ratio, seed)
    tx, stats = normalize(tx)
    vx, _ = normalize(vx, stats)
    sx, _ = normalize(test_x, stats)
    return DatasetSplit(tx, ty.astype(np.int64), vx, vy.astype(np.int64), sx, test_y.astype(np.int64), seed, stats)


def load_dataset(cfg) -> DatasetSplit:
    """Build the split named by ``cfg.data``: "synthetic" or a CIFAR-10 binary directory."""
    if cfg.data == "synthetic":
        px, py = synthetic_blobs(cfg.synthetic_images, cfg.classes, seed=cfg.eval_seed)
        sx, sy = synthetic_blobs(cfg.synthetic_test_images, cfg.classes, seed=cfg.eval_seed + 1)
    else:
        root = Path(cfg.data)
        px, py = load_cifar_binary(root)
        sx, sy = load_cifar_binary(root / TEST_FILE)
        if cfg.subset:
            px, py = take_per_class(px, py, cfg.subset)
            sx, sy = take_per_class(sx, sy, max(1, cfg.subset // 5))
    return make_split(px, py, sx, sy, 0.9, cfg.eval_seed)
