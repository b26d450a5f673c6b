"""Dataset construction and ingestion for the tiny MLP.

Supported sources: seeded Gaussian blobs, CSV (label in the last column) and
IDX image/label files (28x28 images are average-pooled 4x4 down to 7x7).
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .models import TinyMLP

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def gaussian_blobs(n: int = 512, input_dim: int = 49, classes: int = 5,
                   seed: int = 0, spread: float = 1.0, separation: float = 1.0):
    """Isotropic Gaussian blobs, one per class, labels balanced round-robin."""
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((classes, input_dim))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    inputs = means[labels] + spread * rng.standard_normal((n, input_dim))
    return inputs, labels


def load_csv(path, label_column: int = -1):
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    labels = data[:, label_column].astype(np.int64)
    inputs = np.delete(data, label_column % data.shape[1], axis=1)
    return inputs, labels


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes (images ``0x803`` or labels ``0x801``)."""
    with _open(path) as fh:
        raw = fh.read()
    magic, = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES:
        n, rows, cols = struct.unpack(">III", raw[4:16])
        data = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
        return data.reshape(n, rows, cols)
    if magic == IDX_LABELS:
        n, = struct.unpack(">I", raw[4:8])
        return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).copy()
    raise ValueError(f"{path}: unsupported IDX magic {magic:#010x}")


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        if array.ndim == 3:
            fh.write(struct.pack(">IIII", IDX_IMAGES, *array.shape))
        elif array.ndim == 1:
            fh.write(struct.pack(">II", IDX_LABELS, array.shape[0]))
        else:
            raise ValueError("IDX writer supports image stacks and label vectors only")
        fh.write(array.tobytes())


def pool_images(images: np.ndarray, factor: int = 4) -> np.ndarray:
    """Average-pool ``(n, H, W)`` images by ``factor`` (28x28 -> 7x7 for 4)."""
    n, h, w = images.shape
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} not divisible by {factor}")
    x = images.astype(np.float64).reshape(n, h // factor, factor, w // factor, factor)
    return x.mean(axis=(2, 4))


def load_idx_dataset(images_path, labels_path, classes: int | None = None,
                     limit: int | None = None):
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts differ")
    if images.shape[1:] == (28, 28):
        images = pool_images(images, 4)
    inputs = images.reshape(images.shape[0], -1) / 255.0
    if classes is not None:
        keep = labels < classes
        inputs, labels = inputs[keep], labels[keep]
    if limit is not None:
        inputs, labels = inputs[:limit], labels[:limit]
    return inputs, labels


def make_tiny_mlp(input_dim: int = 49, hidden: int = 16, classes: int = 5,
                  n: int = 512, seed: int = 0, data: dict | None = None) -> TinyMLP:
    """Build a :class:`TinyMLP` on synthetic blobs or on ingested data.

    ``data`` may hold ``{"csv": path}`` or ``{"idx_images": p, "idx_labels": q}``.
    """
    data = data or {}
    if "csv" in data:
        inputs, labels = load_csv(data["csv"])
    elif "idx_images" in data:
        inputs, labels = load_idx_dataset(data["idx_images"], data["idx_labels"],
                                          classes=classes, limit=n)
    else:
        inputs, labels = gaussian_blobs(n, input_dim, classes, seed)
    return TinyMLP(inputs=inputs, labels=labels, hidden=hidden, classes=classes, seed=seed)
