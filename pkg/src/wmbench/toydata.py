"""Procedural toy image domain.

Piecewise-smooth scenes: a colour gradient background, a handful of soft
ellipses and rectangles, and low-amplitude smooth texture. The tiny
diffusion backend is fitted on this domain and the CLI's bundled toy set
is drawn from it, so everything runs without downloads.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import ImageBuffer, RngStream, derive_stream


def _smooth_noise(rng: RngStream, size: int, sigma: float) -> np.ndarray:
    n = gaussian_filter(rng.normal((size, size)), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def toy_image(rng: RngStream, size: int = 128, source_id: str = "toy") -> ImageBuffer:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    c0, c1 = rng.uniform(0.15, 0.85, 3), rng.uniform(0.15, 0.85, 3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    img = c0 + (c1 - c0) * ramp[..., None]

    for _ in range(int(rng.integers(3, 8))):
        color = rng.uniform(0.05, 0.95, 3)
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.06, 0.3, 2)
        if rng.uniform() < 0.5:
            d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
            mask = (d <= 1.0).astype(float)
        else:
            mask = ((np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)).astype(float)
        mask = gaussian_filter(mask, rng.uniform(0.6, 2.0))
        img = img * (1 - mask[..., None]) + color * mask[..., None]

    texture = _smooth_noise(rng, size, rng.uniform(1.0, 3.0))
    img = img + rng.uniform(0.01, 0.04) * texture[..., None]
    img = 0.04 + 0.92 * np.clip(img, 0.0, 1.0)
    return ImageBuffer.from_array(img, source_id=source_id)


def toy_set(n: int, size: int = 128, seed: int = 0, prefix: str = "toy") -> list[ImageBuffer]:
    """``n`` deterministic toy images; image ``i`` depends only on (seed, prefix, i)."""
    out = []
    for i in range(n):
        sid = f"{prefix}{i:04d}"
        out.append(toy_image(derive_stream(seed, f"toydata:{sid}"), size, sid))
    return out
