"""Seeded synthetic datasets standing in for monolingual and mixed corpora.

Class k of the L1 population is centered at +2*e_{k mod d}; L2 mirrors it
at -2*e_{k mod d}. A mixed sample is a convex combination of one draw
from each population with the same label, alpha ~ uniform(0.3, 0.7).
Draw order per sample: alpha (mixed only), then d gaussians per
constituent. Additive gaussian noise sigma = 0.5; labels are balanced
round-robin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64

NOISE_SIGMA = 0.5
ALPHA_LO, ALPHA_HI = 0.3, 0.7
CLASS_SCALE = 2.0

KINDS = ("L1", "L2", "mixed")


@dataclass
class ModelSpec:
    input_dim: int
    hidden_dim: int
    class_count: int

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.class_count) < 1:
            raise ValueError("input_dim, hidden_dim, class_count must all be >= 1")


@dataclass
class Dataset:
    X: np.ndarray  # n x d float64
    y: np.ndarray  # n int64 labels in [0, c)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.y)


def _class_mean(kind: str, label: int, d: int) -> np.ndarray:
    mean = np.zeros(d)
    mean[label % d] = CLASS_SCALE if kind == "L1" else -CLASS_SCALE
    return mean


def _draw(rng: SplitMix64, kind: str, label: int, d: int) -> np.ndarray:
    return _class_mean(kind, label, d) + NOISE_SIGMA * np.array(rng.gaussians(d))


def gen_dataset(kind: str, n: int, spec: ModelSpec, seed: int,
                split: str = "train") -> Dataset:
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    c, d = spec.class_count, spec.input_dim
    if n < c:
        raise ValueError(f"need n >= class_count, got n={n} < c={c}")
    rng = SplitMix64(seed)
    X = np.empty((n, d))
    y = np.arange(n, dtype=np.int64) % c  # balanced round-robin
    for i in range(n):
        label = int(y[i])
        if kind == "mixed":
            alpha = rng.uniform_range(ALPHA_LO, ALPHA_HI)
            x1 = _draw(rng, "L1", label, d)
            x2 = _draw(rng, "L2", label, d)
            X[i] = alpha * x1 + (1.0 - alpha) * x2
        else:
            X[i] = _draw(rng, kind, label, d)
    return Dataset(X, y, split)


def concat(a: Dataset, b: Dataset, split: str = "train") -> Dataset:
    return Dataset(np.concatenate([a.X, b.X]), np.concatenate([a.y, b.y]), split)
