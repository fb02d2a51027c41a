"""Post-hoc frequency-domain bitstream watermarks.

Luminance (BT.601 Y) gets a one-level Haar DWT; the LL band is cut into
4x4 blocks and each block is DCT'd. Block k carries payload bit
``k mod n_bits`` through dithered quantisation-index modulation (QIM):

* ``dwt_dct``: on the difference of the upper-mid pair (2,3)-(3,2);
* ``dwt_dct_svd``: on the leading singular value of the DCT block.

The change in Y is added equally to R, G and B so chroma is untouched.
Decoding sums soft per-block votes for each bit.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
import pywt
from scipy.fft import dctn, idctn

from ..core import ImageBuffer, derive_stream
from .keys import WatermarkKey

BLOCK = 4
PAIR = ((2, 3), (3, 2))
DEFAULT_STRENGTH = {"dwt_dct": 0.3, "dwt_dct_svd": 0.25}
LUMA = np.array([0.299, 0.587, 0.114])


class PayloadTooLarge(ValueError):
    pass


def luminance(x: np.ndarray) -> np.ndarray:
    return x @ LUMA


def _ll_blocks(y: np.ndarray):
    """Haar DWT then DCT of 4x4 LL blocks. Returns (coeffs, (LH, HL, HH), crop, grid)."""
    h2, w2 = (y.shape[0] // (2 * BLOCK)) * 2 * BLOCK, (y.shape[1] // (2 * BLOCK)) * 2 * BLOCK
    ll, details = pywt.dwt2(y[:h2, :w2], "haar")
    nb_i, nb_j = ll.shape[0] // BLOCK, ll.shape[1] // BLOCK
    blocks = ll.reshape(nb_i, BLOCK, nb_j, BLOCK).transpose(0, 2, 1, 3).reshape(-1, BLOCK, BLOCK)
    return dctn(blocks, axes=(1, 2), norm="ortho"), details, (h2, w2), (nb_i, nb_j)


def _from_blocks(coeffs: np.ndarray, details, grid) -> np.ndarray:
    nb_i, nb_j = grid
    blocks = idctn(coeffs, axes=(1, 2), norm="ortho")
    ll = blocks.reshape(nb_i, nb_j, BLOCK, BLOCK).transpose(0, 2, 1, 3).reshape(nb_i * BLOCK, nb_j * BLOCK)
    return pywt.idwt2((ll, details), "haar")


def _dither(key: WatermarkKey, n_blocks: int) -> np.ndarray:
    return derive_stream(key.base_seed, f"dither:{key.scheme}").uniform(size=n_blocks) * key.strength


def _qim_embed(v: np.ndarray, bits: np.ndarray, step: float, dither: np.ndarray) -> np.ndarray:
    off = dither + bits * step / 2
    return step * np.round((v - off) / step) + off


def _qim_soft(v: np.ndarray, step: float, dither: np.ndarray) -> np.ndarray:
    """Positive means closer to the bit-1 lattice; range [-0.5, 0.5]."""
    r = np.mod((v - dither) / step, 1.0)
    d0 = np.minimum(r, 1 - r)
    d1 = np.abs(r - 0.5)
    return d0 - d1


def _carrier(coeffs: np.ndarray, scheme: str) -> np.ndarray:
    if scheme == "dwt_dct":
        return coeffs[:, PAIR[0][0], PAIR[0][1]] - coeffs[:, PAIR[1][0], PAIR[1][1]]
    return np.linalg.svd(coeffs, compute_uv=False)[:, 0]


def _set_carrier(coeffs: np.ndarray, scheme: str, target: np.ndarray) -> np.ndarray:
    out = coeffs.copy()
    if scheme == "dwt_dct":
        delta = (target - _carrier(coeffs, scheme)) / 2
        out[:, PAIR[0][0], PAIR[0][1]] += delta
        out[:, PAIR[1][0], PAIR[1][1]] -= delta
        return out
    u, s, vt = np.linalg.svd(coeffs)
    s[:, 0] = np.maximum(target, s[:, 1])  # keep ordering; only bites for pathological blocks
    return np.einsum("bij,bj,bjk->bik", u, s, vt)


def block_count(height: int, width: int) -> int:
    return (height // (2 * BLOCK)) * (width // (2 * BLOCK))


def _check(x: ImageBuffer, key: WatermarkKey, scheme: str) -> int:
    if key.scheme != scheme:
        raise ValueError(f"key is for {key.scheme!r}, not {scheme!r}")
    n = block_count(x.height, x.width)
    if n < key.n_bits:
        raise PayloadTooLarge(
            f"{x.height}x{x.width} image gives {n} blocks, fewer than the {key.n_bits}-bit payload"
        )
    return n


def _embed(x: ImageBuffer, key: WatermarkKey, scheme: str) -> ImageBuffer:
    n = _check(x, key, scheme)
    y = luminance(x.values)
    coeffs, details, (h2, w2), grid = _ll_blocks(y)
    bits = key.bits[np.arange(n) % key.n_bits].astype(float)
    target = _qim_embed(_carrier(coeffs, scheme), bits, key.strength, _dither(key, n))
    y_new = y.copy()
    y_new[:h2, :w2] = _from_blocks(_set_carrier(coeffs, scheme, target), details, grid)
    out = x.values + (y_new - y)[..., None]
    return ImageBuffer.from_array(out, x.source_id)


def _decode(x: ImageBuffer, key: WatermarkKey, scheme: str) -> Tuple[np.ndarray, np.ndarray]:
    n = _check(x, key, scheme)
    coeffs, _, _, _ = _ll_blocks(luminance(x.values))
    soft = _qim_soft(_carrier(coeffs, scheme), key.strength, _dither(key, n))
    votes = np.bincount(np.arange(n) % key.n_bits, weights=soft, minlength=key.n_bits)
    return (votes > 0).astype(np.uint8), votes


def embed_dwt_dct(x: ImageBuffer, key: WatermarkKey) -> ImageBuffer:
    return _embed(x, key, "dwt_dct")


def embed_dwt_dct_svd(x: ImageBuffer, key: WatermarkKey) -> ImageBuffer:
    return _embed(x, key, "dwt_dct_svd")


def decode_bits(x: ImageBuffer, key: WatermarkKey) -> np.ndarray:
    return _decode(x, key, key.scheme)[0]


def bit_accuracy(decoded: np.ndarray, payload: np.ndarray) -> float:
    decoded, payload = np.asarray(decoded), np.asarray(payload)
    if decoded.shape != payload.shape:
        raise ValueError(f"bit strings differ in length: {decoded.size} vs {payload.size}")
    return float(np.mean(decoded == payload))
