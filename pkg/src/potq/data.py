"""Datasets: IDX file reading/writing and a synthetic image task.

The synthetic task generates small grayscale images, one Gaussian bump per
class at a class-specific position, with per-sample jitter and pixel noise.
It is hermetic (no downloads) and hard enough at the default settings that
low-bitwidth quantization visibly costs accuracy without training tricks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "load_idx",
    "save_idx",
    "synthetic_blobs",
    "dataset_from_idx",
    "dataset_from_csv",
]

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v: k for k, v in _IDX_DTYPES.items()}


@dataclass
class Dataset:
    """Images (N, C, H, W) float32 in [0, 1] and integer labels (N,)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError("images must be (N, C, H, W)")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must be one per image")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1


def load_idx(path: str) -> np.ndarray:
    """Read one array in IDX format (the MNIST container layout)."""
    with open(path, "rb") as f:
        header = f.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise ValueError(f"{path}: not an IDX file")
        type_code, ndim = header[2], header[3]
        if type_code not in _IDX_DTYPES:
            raise ValueError(f"{path}: unknown IDX type code 0x{type_code:02x}")
        dims = struct.unpack(f">{ndim}I", f.read(4 * ndim))
        data = np.frombuffer(f.read(), dtype=_IDX_DTYPES[type_code])
    expected = int(np.prod(dims))
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} items, header says {expected}")
    return data.reshape(dims).astype(_IDX_DTYPES[type_code].newbyteorder("="))


def save_idx(path: str, arr: np.ndarray) -> None:
    dtype = np.dtype(arr.dtype).newbyteorder(">")
    if dtype not in _IDX_CODES:
        raise ValueError(f"dtype {arr.dtype} not representable in IDX")
    with open(path, "wb") as f:
        f.write(bytes([0, 0, _IDX_CODES[dtype], arr.ndim]))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def dataset_from_idx(images_path: str, labels_path: str) -> Dataset:
    """Load (N, H, W) ubyte images + (N,) ubyte labels as a Dataset."""
    raw = load_idx(images_path)
    labels = load_idx(labels_path).astype(np.int64)
    if raw.ndim == 3:
        raw = raw[:, None, :, :]
    if raw.ndim != 4:
        raise ValueError(f"images array must be 3-d or 4-d, got shape {raw.shape}")
    images = raw.astype(np.float32)
    if images.max() > 1.0:
        images /= 255.0
    return Dataset(images, labels)


def dataset_from_csv(path: str) -> Dataset:
    """Load a delimited dataset: one sample per row, label first, then the
    pixels of a square grayscale image."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.shape[1] < 2:
        raise ValueError(f"{path}: rows need a label plus at least one pixel")
    labels = raw[:, 0].astype(np.int64)
    pixels = raw[:, 1:]
    size = int(round(np.sqrt(pixels.shape[1])))
    if size * size != pixels.shape[1]:
        raise ValueError(f"{path}: {pixels.shape[1]} pixels is not a square image")
    images = pixels.reshape(-1, 1, size, size).astype(np.float32)
    if images.max() > 1.0:
        images /= 255.0
    return Dataset(images, labels)


def _class_centers(classes: int, size: int) -> np.ndarray:
    """Class-specific bump centers on a ring (plus the middle for class 0)."""
    centers = [(size / 2.0, size / 2.0)]
    r = size * 0.30
    for i in range(1, classes):
        theta = 2.0 * np.pi * (i - 1) / max(classes - 1, 1)
        centers.append((size / 2.0 + r * np.cos(theta), size / 2.0 + r * np.sin(theta)))
    return np.asarray(centers[:classes], dtype=np.float64)


def synthetic_blobs(
    n: int,
    classes: int = 10,
    size: int = 12,
    noise: float = 0.25,
    jitter: float = 1.0,
    sigma: float = 1.6,
    seed: int = 0,
) -> Dataset:
    """Deterministic Gaussian-bump classification images."""
    rng = np.random.default_rng(seed)
    centers = _class_centers(classes, size)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    labels = rng.integers(0, classes, size=n)
    images = np.empty((n, 1, size, size), dtype=np.float32)
    for i, lab in enumerate(labels):
        cy, cx = centers[lab]
        cy += rng.uniform(-jitter, jitter)
        cx += rng.uniform(-jitter, jitter)
        amp = rng.uniform(0.7, 1.1)
        bump = amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2))
        img = bump + rng.normal(0.0, noise, size=(size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels.astype(np.int64))
