"""Feature extractors for the Frechet distance.

The default embeds every non-overlapping 8x8 RGB patch with a fixed
Gaussian random projection (seed-pinned), so distances are exact and
reproducible without any pretrained network. Each patch is one sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Sequence

import numpy as np

from ..core import ImageBuffer, derive_stream
from .metrics import FrechetStats


@dataclass(frozen=True)
class RandomProjectionFeatures:
    patch: int = 8
    dim: int = 64
    seed: int = 0

    @cached_property
    def projection(self) -> np.ndarray:
        d_in = self.patch * self.patch * 3
        return derive_stream(self.seed, f"features:rp:{self.patch}:{self.dim}").normal((d_in, self.dim)) / np.sqrt(d_in)

    def patches(self, img: ImageBuffer) -> np.ndarray:
        p = self.patch
        h, w = (img.height // p) * p, (img.width // p) * p
        x = img.values[:h, :w]
        return x.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4).reshape(-1, p * p * 3)

    def __call__(self, images: Sequence[ImageBuffer]) -> np.ndarray:
        if not images:
            raise ValueError("no images to embed")
        return np.concatenate([self.patches(im) for im in images]) @ self.projection


_REGISTRY: Dict[str, Callable[[], Callable]] = {"random_projection": RandomProjectionFeatures}


def register_extractor(name: str, factory: Callable[[], Callable]) -> None:
    """Plug in another extractor (e.g. a pretrained Inception wrapper) under ``name``."""
    _REGISTRY[name] = factory


def get_extractor(name: str = "random_projection"):
    if name not in _REGISTRY:
        raise KeyError(f"unknown feature extractor {name!r}; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name]()


def frechet_stats(images: Sequence[ImageBuffer], extractor=None) -> FrechetStats:
    extractor = extractor or get_extractor()
    return FrechetStats.from_features(extractor(images))
