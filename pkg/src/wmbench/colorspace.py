"""sRGB <-> CIELAB conversion (D65, 2 degree observer).

All constants live here so the attack code and the tests share one unit.
"""

import numpy as np

WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
SRGB_THRESHOLD = 0.04045
SRGB_SLOPE = 12.92
SRGB_GAMMA = 2.4
CIE_EPSILON = 216.0 / 24389.0
CIE_KAPPA = 24389.0 / 27.0

# IEC 61966-2-1 primaries
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= SRGB_THRESHOLD, c / SRGB_SLOPE, ((c + 0.055) / 1.055) ** SRGB_GAMMA)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    lo = c * SRGB_SLOPE
    hi = 1.055 * np.power(np.maximum(c, 0.0), 1.0 / SRGB_GAMMA) - 0.055
    return np.where(c <= SRGB_THRESHOLD / SRGB_SLOPE, lo, hi)


def _f(t):
    return np.where(t > CIE_EPSILON, np.cbrt(t), (CIE_KAPPA * t + 16.0) / 116.0)


def _finv(f):
    f3 = f**3
    return np.where(f3 > CIE_EPSILON, f3, (116.0 * f - 16.0) / CIE_KAPPA)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an ``(..., 3)`` sRGB array in [0, 1] to CIELAB."""
    xyz = srgb_to_linear(rgb) @ RGB_TO_XYZ.T
    f = _f(xyz / WHITE_D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab: np.ndarray, clip: bool = True):
    """Convert CIELAB to sRGB.

    Returns the sRGB array; with ``clip`` the result is clipped to [0, 1].
    The fraction of pixels that needed clipping is available via
    :func:`lab_to_rgb_with_gamut`.
    """
    rgb, _ = lab_to_rgb_with_gamut(lab, clip=clip)
    return rgb


def lab_to_rgb_with_gamut(lab: np.ndarray, clip: bool = True):
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_finv(fx), _finv(fy), _finv(fz)], axis=-1) * WHITE_D65
    rgb = linear_to_srgb(xyz @ XYZ_TO_RGB.T)
    out_of_gamut = np.any((rgb < 0.0) | (rgb > 1.0), axis=-1)
    frac = float(out_of_gamut.mean()) if out_of_gamut.size else 0.0
    if clip:
        rgb = np.clip(rgb, 0.0, 1.0)
    return rgb, frac
