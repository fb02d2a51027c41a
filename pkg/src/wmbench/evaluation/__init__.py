"""Metrics, calibration and the scheme x attack grid."""

from .features import RandomProjectionFeatures, frechet_stats, get_extractor, register_extractor
from .grid import (
    CSV_COLUMNS,
    REPORT_SCHEMA,
    EvalConfig,
    EvalReport,
    calibrate_schemes,
    evaluate_grid,
    load_report,
    null_scores,
    scheme_key,
)
from .metrics import (
    CalibrationError,
    FrechetStats,
    achieved_fpr,
    bit_accuracy,
    calibrate_threshold,
    frechet_distance,
    mean_ci95,
    psnr,
    ssim,
    tpr_at_fpr,
)

__all__ = [
    "CSV_COLUMNS", "REPORT_SCHEMA", "CalibrationError", "EvalConfig", "EvalReport", "FrechetStats",
    "RandomProjectionFeatures", "achieved_fpr", "bit_accuracy", "calibrate_schemes", "calibrate_threshold",
    "evaluate_grid", "frechet_distance", "frechet_stats", "get_extractor", "load_report", "mean_ci95",
    "null_scores", "psnr", "register_extractor", "scheme_key", "ssim", "tpr_at_fpr",
]
