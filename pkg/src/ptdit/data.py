"""Synthetic latent datasets for desk-scale training.

Every class has a fixed template image; a sample is its template plus iid
Gaussian noise of std ``noise``. Batches are a pure function of
(seed, step), so resuming a run replays the same data.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

GENERATORS = ("gaussian-blobs", "striped-classes", "single-image-memorization")


def _standardize(img: np.ndarray) -> np.ndarray:
    return (img - img.mean()) / img.std()


def memorization_image(size: int) -> np.ndarray:
    """A smooth standardized pattern: one sinusoid plus one off-center bump."""
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.sin(2 * np.pi * x) * np.cos(np.pi * y) + np.exp(-((x - 0.3) ** 2 + (y - 0.6) ** 2) / 0.05)
    return _standardize(img)


def _blob_templates(size: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angles = 2 * np.pi * (np.arange(k) + rng.uniform(0, 1)) / max(k, 1)
    cy, cx = 0.5 + 0.3 * np.sin(angles), 0.5 + 0.3 * np.cos(angles)
    width = 0.02 + 0.03 * rng.uniform(size=k)
    return np.stack([2.0 * np.exp(-((x - cx[i]) ** 2 + (y - cy[i]) ** 2) / width[i]) - 0.5 for i in range(k)])


def _stripe_templates(size: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 2])
    y, x = np.mgrid[0:size, 0:size] / size
    out = []
    for i in range(k):
        theta = np.pi * i / k
        freq = 1 + i % 3
        phase = rng.uniform(0, 2 * np.pi)
        out.append(np.sin(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + phase))
    return np.stack(out)


@dataclass
class SyntheticDataset:
    generator: str = "gaussian-blobs"
    size: int = 8
    num_classes: int = 10
    seed: int = 0
    channels: int = 1
    frames: int = 1
    noise: float = 0.1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown dataset generator {self.generator!r}; choose from {GENERATORS}")
        if self.size < 2:
            raise ValueError("size must be >= 2")
        if self.generator == "single-image-memorization":
            self.num_classes = 1
            self.noise = 0.0
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.templates = self._templates()

    def _templates(self) -> np.ndarray:
        """[K, C, F, H, W] class means."""
        s, k = self.size, self.num_classes
        if self.generator == "single-image-memorization":
            base = memorization_image(s)[None]
        elif self.generator == "gaussian-blobs":
            base = _blob_templates(s, k, self.seed)
        else:
            base = _stripe_templates(s, k, self.seed)
        return np.broadcast_to(base[:, None, None], (k, self.channels, self.frames, s, s)).copy()

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.channels, self.frames, self.size, self.size)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(0, self.num_classes, size=n)
        x = self.templates[labels]
        if self.noise > 0:
            x = x + self.noise * rng.standard_normal(x.shape)
        return x, labels

    def batch(self, step: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
        return self.sample(batch_size, np.random.default_rng([self.seed, 7, step]))

    def class_separation(self) -> float:
        """Smallest distance between two class means, in units of the noise std."""
        if self.num_classes < 2:
            return float("inf")
        flat = self.templates.reshape(self.num_classes, -1)
        d = min(np.linalg.norm(flat[a] - flat[b]) for a, b in itertools.combinations(range(self.num_classes), 2))
        return float("inf") if self.noise == 0 else float(d / self.noise)
