"""Synthetic Gaussian blobs with a few large "head" clusters and many small ones."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Dataset


@dataclass(frozen=True)
class SynthSpec:
    c: int
    d: int = 3
    big_size: int = 200
    small_size: int = 30
    n_big: int = 2
    center_box: float = 20.0
    seed: int = 0
    # redraw centers closer than this (None disables the rejection loop)
    min_center_dist: Optional[float] = None

    def __post_init__(self):
        if self.c < 1 or self.d < 1:
            raise ValueError("c and d must be >= 1")
        if self.big_size < 1 or self.small_size < 1:
            raise ValueError("cluster sizes must be >= 1")
        if self.n_big < 0:
            raise ValueError("n_big must be >= 0")
        if self.center_box <= 0:
            raise ValueError("center_box must be positive")

    @property
    def sizes(self) -> list[int]:
        nb = min(self.n_big, self.c)
        return [self.big_size] * nb + [self.small_size] * (self.c - nb)


def _draw_centers(spec: SynthSpec, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    if spec.min_center_dist is None:
        return rng.uniform(0.0, spec.center_box, size=(spec.c, spec.d))
    min_sq = spec.min_center_dist ** 2
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < spec.c:
        cand = rng.uniform(0.0, spec.center_box, size=spec.d)
        if all(((cand - m) ** 2).sum() >= min_sq for m in centers):
            centers.append(cand)
            continue
        tries += 1
        if tries > max_tries:
            raise RuntimeError(
                f"could not place {spec.c} centers {spec.min_center_dist} apart "
                f"in a box of side {spec.center_box}"
            )
    return np.vstack(centers)


def generate(spec: SynthSpec) -> Dataset:
    """Draw ``spec.c`` unit-covariance Gaussian clusters; labels are 1..c."""
    return generate_with_centers(spec)[0]


def generate_with_centers(spec: SynthSpec) -> tuple[Dataset, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    centers = _draw_centers(spec, rng)
    sizes = spec.sizes
    points = np.vstack([
        rng.standard_normal((size, spec.d)) + centers[k] for k, size in enumerate(sizes)
    ])
    labels = np.repeat(np.arange(1, spec.c + 1), sizes)
    return Dataset(points, labels, [f"x{j + 1}" for j in range(spec.d)]), centers
