"""Reference watermark schemes behind one embed/detect interface."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ImageBuffer, derive_stream
from .bitstream import (
    DEFAULT_STRENGTH,
    PayloadTooLarge,
    bit_accuracy,
    decode_bits,
    embed_dwt_dct,
    embed_dwt_dct_svd,
)
from .external import AdapterError, ExternalAdapter, adapter_for
from .fourier_ring import BackendRequired, embed_fourier_ring, generate, make_ring_key, ring_distance
from .keys import BITSTREAM_SCHEMES, SCHEMES, DetectionOutcome, WatermarkKey


def make_key(scheme: str, root_seed: int = 0, n_bits: int = 32, strength: Optional[float] = None,
             latent_shape=None, command=None) -> WatermarkKey:
    """Draw a fresh key for ``scheme`` from the stream ``key:<scheme>`` of ``root_seed``."""
    if scheme in BITSTREAM_SCHEMES:
        bits = derive_stream(root_seed, f"key:{scheme}").bits(n_bits)
        st = DEFAULT_STRENGTH[scheme] if strength is None else strength
        return WatermarkKey(scheme, st, root_seed, bits=bits)
    if scheme == "fourier_ring":
        if latent_shape is None:
            raise ValueError("fourier_ring keys are tied to a latent shape")
        return make_ring_key(latent_shape, root_seed, strength=1.0 if strength is None else strength)
    if scheme == "external":
        if command is None:
            raise ValueError("external keys need an adapter command")
        bits = derive_stream(root_seed, "key:external").bits(n_bits)
        return WatermarkKey("external", 1.0 if strength is None else strength, root_seed, bits=bits,
                            extra={"command": command})
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def embed(x_or_seed, key: WatermarkKey, backend=None) -> ImageBuffer:
    """Bitstream/external schemes mark an image; fourier_ring takes a prompt seed and generates."""
    if key.scheme == "dwt_dct":
        return embed_dwt_dct(x_or_seed, key)
    if key.scheme == "dwt_dct_svd":
        return embed_dwt_dct_svd(x_or_seed, key)
    if key.scheme == "fourier_ring":
        return embed_fourier_ring(int(x_or_seed), key, backend)
    return adapter_for(key).embed(x_or_seed, key)


def statistic(x: ImageBuffer, key: WatermarkKey, backend=None):
    """Scheme score (higher means more watermark-like) and decoded bits if any."""
    if key.scheme in BITSTREAM_SCHEMES:
        decoded = decode_bits(x, key)
        return bit_accuracy(decoded, key.bits), decoded
    if key.scheme == "fourier_ring":
        return -ring_distance(x, key, backend), None
    return adapter_for(key).detect(x, key)


def detect(x: ImageBuffer, key: WatermarkKey, backend=None, threshold: float = float("nan")) -> DetectionOutcome:
    """Score ``x`` and threshold at ``threshold`` (NaN never detects)."""
    stat, decoded = statistic(x, key, backend)
    return DetectionOutcome(float(stat), float(threshold), decoded)


__all__ = [
    "AdapterError", "BackendRequired", "DetectionOutcome", "ExternalAdapter", "PayloadTooLarge",
    "WatermarkKey", "bit_accuracy", "decode_bits", "detect", "embed", "embed_dwt_dct",
    "embed_dwt_dct_svd", "embed_fourier_ring", "generate", "make_key", "make_ring_key",
    "ring_distance", "statistic",
]
