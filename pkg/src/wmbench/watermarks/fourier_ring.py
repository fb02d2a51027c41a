"""Semantic watermark planted in the Fourier spectrum of the initial noise.

The key fixes a disk of radius ``r`` around the spectrum centre of one
latent channel; inside it each integer ring gets one real constant. A
generation draws Gaussian noise, overwrites the disk with the pattern,
samples with DDIM and decodes. Detection DDIM-inverts the image back to
the initial noise and measures the L1 gap to the pattern over the masked
half-spectrum (the other half is its conjugate mirror).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ImageBuffer, Latent, derive_stream
from .keys import WatermarkKey


class BackendRequired(ValueError):
    pass


def _centred_freqs(h: int, w: int):
    ky = np.arange(h) - h // 2
    kx = np.arange(w) - w // 2
    return np.meshgrid(ky, kx, indexing="ij")


def ring_mask(h: int, w: int, radius: float) -> np.ndarray:
    ky, kx = _centred_freqs(h, w)
    return np.hypot(ky, kx) <= radius


def half_mask(mask: np.ndarray) -> np.ndarray:
    """One representative of each conjugate pair, plus self-conjugate sites."""
    ky, kx = _centred_freqs(*mask.shape)
    return mask & ((ky > 0) | ((ky == 0) & (kx >= 0)))


def default_radius(h: int, w: int) -> int:
    return max(2, int(round(min(h, w) * 10 / 64)))


def make_ring_key(latent_shape, root_seed: int = 0, radius: Optional[float] = None,
                  channel: Optional[int] = None, strength: float = 1.0) -> WatermarkKey:
    c, h, w = latent_shape
    channel = c - 1 if channel is None else channel
    radius = default_radius(h, w) if radius is None else radius
    mask = ring_mask(h, w, radius)
    ky, kx = _centred_freqs(h, w)
    rings = np.rint(np.hypot(ky, kx)).astype(int)
    values = derive_stream(root_seed, "fourier_ring:pattern").normal((int(np.ceil(radius)) + 1,))
    pattern = np.where(mask, strength * values[np.minimum(rings, values.size - 1)], 0).astype(np.complex128)
    return WatermarkKey("fourier_ring", strength, root_seed, ring_pattern=pattern, ring_mask=mask,
                        channel=channel, extra={"radius": float(radius), "latent_shape": [c, h, w]})


def spectrum(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(a, norm="ortho"))


def initial_noise(prompt_seed: int, latent_shape, key: Optional[WatermarkKey] = None) -> np.ndarray:
    z = derive_stream(prompt_seed, "fourier_ring:initial_noise").normal(tuple(latent_shape))
    if key is None:
        return z
    f = spectrum(z[key.channel])
    f[key.ring_mask] = key.ring_pattern[key.ring_mask]
    z[key.channel] = np.fft.ifft2(np.fft.ifftshift(f), norm="ortho").real
    return z


def _latent_shape(key: Optional[WatermarkKey], backend, size: Optional[int]):
    if key is not None and "latent_shape" in key.extra:
        return tuple(key.extra["latent_shape"])
    if size is None:
        raise ValueError("need an image size for an unkeyed generation")
    return backend.autoencoder.latent_shape(size, size)


def generate(prompt_seed: int, key: Optional[WatermarkKey], backend, size: Optional[int] = None,
             source_id: Optional[str] = None) -> ImageBuffer:
    """Full DDIM generation from (optionally ring-keyed) initial noise. ``key=None`` gives a null image."""
    if backend is None:
        raise BackendRequired("fourier_ring generation needs a diffusion backend")
    shape = _latent_shape(key, backend, size)
    z_T = Latent(initial_noise(prompt_seed, shape, key), backend.schedule.T)
    z0 = backend.sample(z_T, conditioning=backend.null_conditioning())
    return backend.decode(z0, source_id or f"gen{prompt_seed}")


def embed_fourier_ring(prompt_seed: int, key: WatermarkKey, backend) -> ImageBuffer:
    if key.scheme != "fourier_ring":
        raise ValueError(f"key is for {key.scheme!r}, not 'fourier_ring'")
    return generate(prompt_seed, key, backend)


def ring_distance(x: ImageBuffer, key: WatermarkKey, backend) -> float:
    if backend is None:
        raise BackendRequired("fourier_ring detection needs a diffusion backend to invert the image")
    z = backend.encode(x)
    if z.shape[1:] != key.ring_mask.shape:
        raise ValueError(f"latent {z.shape[1:]} does not match key mask {key.ring_mask.shape}")
    z_T = backend.invert(z, conditioning=backend.null_conditioning())
    f = spectrum(z_T.values[key.channel])
    sel = half_mask(key.ring_mask)
    return float(np.mean(np.abs(f[sel] - key.ring_pattern[sel])))
