"""Synthetic datasets standing in for image corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RING_STD = 0.05
BLOB_CLASSES = 4
SIGNAL_LEN = 32


@dataclass
class Dataset:
    kind: str
    n: int
    seed: int
    x: np.ndarray
    labels: np.ndarray | None = None

    @property
    def sample_shape(self) -> tuple:
        return self.x.shape[1:]

    def batch(self, rng: np.random.Generator, size: int):
        idx = rng.integers(0, self.n, size)
        return self.x[idx], (None if self.labels is None else self.labels[idx])


def ring_centers(k: int = 8) -> np.ndarray:
    ang = 2 * np.pi * np.arange(k) / k
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def blob_centers() -> np.ndarray:
    return 4.0 + 8.0 * np.arange(BLOB_CLASSES)


def gen_dataset(kind: str, n: int, seed: int, dtype=np.float32) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = None
    if kind == "ring8":
        labels = rng.integers(0, 8, n)
        x = ring_centers()[labels] + RING_STD * rng.standard_normal((n, 2))
    elif kind == "spiral2d":
        r = np.sqrt(rng.uniform(0, 1, n)) * 3 * np.pi
        x = np.stack([r * np.cos(r), r * np.sin(r)], axis=1) / (3 * np.pi)
        x += 0.02 * rng.standard_normal((n, 2))
    elif kind == "checkerboard2d":
        x1 = rng.uniform(-2, 2, n)
        x2 = rng.uniform(0, 1, n) + rng.integers(0, 2, n) * 2 - 2
        x2 = x2 + (np.floor(x1) % 2)
        x = np.stack([x1, x2], axis=1) / 2.0
    elif kind == "blobs1d":
        labels = rng.integers(0, BLOB_CLASSES, n)
        pos = np.arange(SIGNAL_LEN)[None, :]
        centers = blob_centers()[labels][:, None] + rng.normal(0, 0.5, (n, 1))
        amp = rng.uniform(0.6, 1.0, (n, 1))
        x = amp * np.exp(-((pos - centers) ** 2) / (2 * 2.0**2)) + 0.02 * rng.standard_normal((n, SIGNAL_LEN))
        x = x[:, None, :]
    elif kind == "gauss2d":
        x = rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    return Dataset(kind, n, seed, x.astype(dtype), labels)


def num_classes(kind: str) -> int:
    return {"ring8": 8, "blobs1d": BLOB_CLASSES}.get(kind, 0)
