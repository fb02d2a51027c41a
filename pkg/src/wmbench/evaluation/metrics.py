from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from skimage.metrics import structural_similarity

from ..core import ImageBuffer, psnr
from ..watermarks.bitstream import bit_accuracy

MIN_NULL = 100
PSD_TOL = 1e-8


class CalibrationError(ValueError):
    pass


def calibrate_threshold(null_scores: Sequence[float], fpr: float = 0.01) -> float:
    """Empirical (1 - fpr) quantile of the null, taken at the higher order statistic.

    With detections counted as ``score > phi`` the achieved FPR on the
    calibration set never exceeds ``fpr``.
    """
    s = np.asarray(null_scores, dtype=float).ravel()
    if not 0.0 < fpr < 1.0:
        raise CalibrationError(f"fpr must lie in (0, 1), got {fpr}")
    if s.size < MIN_NULL:
        raise CalibrationError(f"need at least {MIN_NULL} null scores to calibrate, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("null scores must be finite")
    return float(np.quantile(s, 1.0 - fpr, method="higher"))


def tpr_at_fpr(marked_scores: Sequence[float], phi: float) -> float:
    s = np.asarray(marked_scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no marked scores")
    return float(np.mean(s > phi))


def achieved_fpr(null_scores: Sequence[float], phi: float) -> float:
    return tpr_at_fpr(null_scores, phi)


def ssim(a: ImageBuffer | np.ndarray, b: ImageBuffer | np.ndarray) -> float:
    a = a.values if isinstance(a, ImageBuffer) else np.asarray(a)
    b = b.values if isinstance(b, ImageBuffer) else np.asarray(b)
    return float(structural_similarity(a, b, channel_axis=-1, data_range=1.0))


def mean_ci95(values: Sequence[float]):
    """Mean and normal-approximation 95% half-width."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


# --------------------------------------------------------------------------
# Frechet distance


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] != np.asarray(self.mean).size:
            raise ValueError("covariance must be square and match the mean")
        object.__setattr__(self, "covariance", (cov + cov.T) / 2)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_features(cls, feats: np.ndarray, shrinkage: float | None = None) -> "FrechetStats":
        """Gaussian fit of ``feats`` (n x d). Shrinks toward a scaled identity when n <= d."""
        feats = np.asarray(feats, dtype=float)
        n, d = feats.shape
        if n < 2:
            raise ValueError("need at least two feature vectors")
        cov = np.cov(feats, rowvar=False).reshape(d, d)
        if shrinkage is None:
            shrinkage = 0.0 if n >= d + 1 else d / (n + d)
        if shrinkage > 0:
            cov = (1 - shrinkage) * cov + shrinkage * np.trace(cov) / d * np.eye(d)
        return cls(feats.mean(axis=0), cov, n)


def psd_sqrt(s: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric PSD square root via eigh; eigenvalues in [-tol, 0) are zeroed, lower ones rejected."""
    s = (s + s.T) / 2
    w, v = np.linalg.eigh(s)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    if a.dim != b.dim:
        raise ValueError(f"feature dims differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    # Tr (Sa Sb)^{1/2} = Tr (Sa^{1/2} Sb Sa^{1/2})^{1/2}, which is symmetric PSD
    ra = psd_sqrt(a.covariance)
    inner = ra @ b.covariance @ ra
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -PSD_TOL * scale:
        raise ValueError("product covariance is not PSD")
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    d = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * tr_sqrt)
    return max(d, 0.0)


__all__ = [
    "CalibrationError", "FrechetStats", "MIN_NULL", "achieved_fpr", "bit_accuracy", "calibrate_threshold",
    "frechet_distance", "mean_ci95", "psd_sqrt", "psnr", "ssim", "tpr_at_fpr",
]
