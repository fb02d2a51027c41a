"""CIELAB colour and contrast transfer toward the watermarked input."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from ..colorspace import lab_to_rgb_with_gamut, rgb_to_lab
from ..core import ImageBuffer, ShapeError

log = logging.getLogger(__name__)

FLAT_SIGMA = 1e-6


class FlatLuminanceWarning(UserWarning):
    pass


def _same_dims(a: ImageBuffer, b: ImageBuffer):
    if a.shape != b.shape:
        raise ShapeError(f"image dims differ: {a.shape} vs {b.shape}")


def match_luminance(L_c: np.ndarray, L_w: np.ndarray) -> np.ndarray:
    """Affinely remap ``L_c`` so its mean and std equal those of ``L_w``.

    Statistics are over the whole channel (population std). A flat ``L_c``
    (std below 1e-6) only gets the mean shift and a warning.
    """
    mu_c, sigma_c = float(L_c.mean()), float(L_c.std())
    mu_w, sigma_w = float(L_w.mean()), float(L_w.std())
    if sigma_c < FLAT_SIGMA:
        warnings.warn("flat luminance; contrast scaling skipped", FlatLuminanceWarning, stacklevel=2)
        return L_c - mu_c + mu_w
    return (sigma_w / sigma_c) * (L_c - mu_c) + mu_w


def color_transfer(x_opt: ImageBuffer, x_w: ImageBuffer, stats: dict | None = None) -> ImageBuffer:
    """Keep the luminance of ``x_opt`` and take a*, b* from ``x_w``."""
    _same_dims(x_opt, x_w)
    lab_o, lab_w = rgb_to_lab(x_opt.values), rgb_to_lab(x_w.values)
    rgb, clipped = lab_to_rgb_with_gamut(np.stack([lab_o[..., 0], lab_w[..., 1], lab_w[..., 2]], axis=-1))
    if stats is not None:
        stats["color_clipped_fraction"] = clipped
    return ImageBuffer.from_array(rgb, x_opt.source_id)


def contrast_transfer(x_c: ImageBuffer, x_w: ImageBuffer, stats: dict | None = None) -> ImageBuffer:
    """Match luminance mean/std of ``x_c`` to ``x_w``; chroma comes from ``x_w``."""
    _same_dims(x_c, x_w)
    lab_c, lab_w = rgb_to_lab(x_c.values), rgb_to_lab(x_w.values)
    L = match_luminance(lab_c[..., 0], lab_w[..., 0])
    rgb, clipped = lab_to_rgb_with_gamut(np.stack([L, lab_w[..., 1], lab_w[..., 2]], axis=-1))
    if stats is not None:
        stats["contrast_clipped_fraction"] = clipped
    if clipped > 0.05:
        log.info("contrast transfer clipped %.1f%% of pixels", 100 * clipped)
    return ImageBuffer.from_array(rgb, x_c.source_id)
