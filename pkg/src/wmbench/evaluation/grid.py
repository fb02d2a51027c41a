"""Scheme x attack evaluation grid and its report."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import jsonschema
import numpy as np

from ..attack.baselines import AttackSpec, apply_attack
from ..core import ImageBuffer, psnr
from ..watermarks import BITSTREAM_SCHEMES, WatermarkKey, embed, generate, make_key, statistic
from .features import frechet_stats, get_extractor
from .metrics import calibrate_threshold, frechet_distance, mean_ci95, ssim, tpr_at_fpr

log = logging.getLogger(__name__)

REPORT_VERSION = 1
CLEAN = "none"
CSV_COLUMNS = ("scheme", "attack", "metric", "value", "n", "ci95")
NULL_SEED_OFFSET = 1_000_000

_num = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["report_version", "manifest", "thresholds", "cells", "records", "failures", "null_scores"],
    "properties": {
        "report_version": {"const": REPORT_VERSION},
        "manifest": {"type": "object"},
        "thresholds": {"type": "object", "additionalProperties": {"type": "number"}},
        "null_scores": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "number"}}},
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(CSV_COLUMNS),
                "properties": {
                    "scheme": {"type": "string"},
                    "attack": {"type": "string"},
                    "metric": {"enum": ["bit_accuracy", "tpr_at_fpr", "psnr", "ssim", "frechet"]},
                    "value": _num,
                    "n": {"type": "integer", "minimum": 0},
                    "ci95": _num,
                },
                "additionalProperties": False,
            },
        },
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["scheme", "attack", "image_id", "condition", "statistic", "detected"],
                "properties": {
                    "condition": {"enum": ["clean_marked", "attacked_marked", "unmarked_null"]},
                    "statistic": {"type": "number"},
                    "detected": {"type": "boolean"},
                    "bit_accuracy": _num,
                    "psnr": _num,
                    "ssim": _num,
                },
            },
        },
        "failures": {
            "type": "array",
            "items": {"type": "object", "required": ["scheme", "attack", "error"]},
        },
    },
}


@dataclass
class EvalConfig:
    seed: int = 0
    fpr: float = 0.01
    n_bits: int = 32
    feature_extractor: str = "random_projection"
    raven: Optional[object] = None  # RavenConfig; None uses defaults seeded by ``seed``
    generation_size: int = 64
    n_null: int = 100


def _finite(v) -> Optional[float]:
    return float(v) if v is not None and math.isfinite(v) else None


def scheme_key(scheme, cfg: EvalConfig, backend=None) -> WatermarkKey:
    if isinstance(scheme, WatermarkKey):
        return scheme
    if scheme == "fourier_ring":
        if backend is None:
            raise ValueError("fourier_ring needs a backend")
        shape = backend.autoencoder.latent_shape(cfg.generation_size, cfg.generation_size)
        return make_key(scheme, cfg.seed, latent_shape=shape)
    return make_key(scheme, cfg.seed, n_bits=cfg.n_bits)


def null_scores(key: WatermarkKey, cfg: EvalConfig, backend=None,
                null_images: Optional[Sequence[ImageBuffer]] = None) -> np.ndarray:
    """Bitstream schemes score unmarked images; the ring scheme scores unmarked generations."""
    if key.scheme == "fourier_ring":
        imgs = [generate(NULL_SEED_OFFSET + i, None, backend, cfg.generation_size, f"null{i}")
                for i in range(cfg.n_null)]
    else:
        if not null_images:
            raise ValueError(f"{key.scheme} calibration needs unmarked images")
        imgs = null_images
    return np.array([statistic(_quantize(x), key, backend)[0] for x in imgs])


def calibrate_schemes(keys: Sequence[WatermarkKey], cfg: EvalConfig, backend=None, null_images=None):
    """Returns ``({scheme: phi}, {scheme: null scores})``."""
    phis, nulls = {}, {}
    for key in keys:
        s = null_scores(key, cfg, backend, null_images)
        phis[key.scheme] = calibrate_threshold(s, cfg.fpr)
        nulls[key.scheme] = s
    return phis, nulls


def _quantize(x: ImageBuffer) -> ImageBuffer:
    """Everything a detector sees went through 8-bit storage."""
    return ImageBuffer(x.to_uint8() / 255.0, source_id=x.source_id)


def marked_set(key: WatermarkKey, dataset: Sequence[ImageBuffer], cfg: EvalConfig, backend=None):
    """``(originals or None, marked)``; the ring scheme generates one image per dataset slot."""
    if key.scheme == "fourier_ring":
        return None, [_quantize(generate(i, key, backend, source_id=f"gen{i}")) for i in range(len(dataset))]
    return list(dataset), [_quantize(embed(x, key, backend)) for x in dataset]


@dataclass
class EvalReport:
    cells: List[dict] = field(default_factory=list)
    records: List[dict] = field(default_factory=list)
    thresholds: Dict[str, float] = field(default_factory=dict)
    null_scores: Dict[str, list] = field(default_factory=dict)
    failures: List[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "manifest": self.manifest,
            "thresholds": self.thresholds,
            "null_scores": self.null_scores,
            "cells": self.cells,
            "records": self.records,
            "failures": self.failures,
        }

    def validate(self) -> None:
        jsonschema.validate(self.to_dict(), REPORT_SCHEMA)

    def cell(self, scheme: str, attack: str, metric: str) -> Optional[float]:
        for c in self.cells:
            if (c["scheme"], c["attack"], c["metric"]) == (scheme, attack, metric):
                return c["value"]
        raise KeyError((scheme, attack, metric))

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for c in self.cells:
                w.writerow(["" if c[k] is None else (f"{c[k]:.6g}" if isinstance(c[k], float) else c[k])
                            for k in CSV_COLUMNS])
        return path

    def to_markdown(self) -> str:
        metrics = ["bit_accuracy", "tpr_at_fpr", "psnr", "ssim", "frechet"]
        rows = sorted({(c["scheme"], c["attack"]) for c in self.cells}, key=lambda r: (r[0], r[1] != CLEAN, r[1]))
        vals = {(c["scheme"], c["attack"], c["metric"]): c["value"] for c in self.cells}
        out = ["| scheme | attack | " + " | ".join(metrics) + " |", "|" + "---|" * (len(metrics) + 2)]
        for s, a in rows:
            cells = [vals.get((s, a, m)) for m in metrics]
            out.append(f"| {s} | {a} | " + " | ".join("-" if v is None else f"{v:.3f}" for v in cells) + " |")
        if self.failures:
            out.append("")
            out.extend(f"- FAILED {f['scheme']} / {f['attack']}: {f['error']}" for f in self.failures)
        return "\n".join(out) + "\n"


def _cell(scheme, attack, metric, value, n, ci=None) -> dict:
    return {"scheme": scheme, "attack": attack, "metric": metric, "value": _finite(value), "n": int(n),
            "ci95": _finite(ci)}


def aggregate_cell(scheme: str, attack: str, recs: List[dict], fid: Optional[float], bitstream: bool) -> List[dict]:
    n = len(recs)
    cells = []
    if bitstream:
        m, ci = mean_ci95([r["bit_accuracy"] for r in recs])
        cells.append(_cell(scheme, attack, "bit_accuracy", m, n, ci))
    p = float(np.mean([r["detected"] for r in recs]))
    cells.append(_cell(scheme, attack, "tpr_at_fpr", p, n, 1.96 * math.sqrt(p * (1 - p) / n)))
    for metric in ("psnr", "ssim"):
        vals = [r[metric] for r in recs if r.get(metric) is not None]
        if vals:
            m, ci = mean_ci95(vals)
            cells.append(_cell(scheme, attack, metric, m, len(vals), ci))
    if fid is not None:
        cells.append(_cell(scheme, attack, "frechet", fid, n))
    return cells


def evaluate_grid(schemes: Sequence, attacks: Sequence[AttackSpec], dataset: Sequence[ImageBuffer],
                  cfg: Optional[EvalConfig] = None, backend=None, thresholds: Optional[Dict[str, float]] = None,
                  nulls: Optional[Dict[str, Sequence[float]]] = None) -> EvalReport:
    """Embed, attack, detect and aggregate every (scheme, attack) cell plus a clean row.

    ``thresholds`` must hold a calibrated phi per scheme (see :func:`calibrate_schemes`).
    A failing cell is logged in ``failures`` and the run continues.
    """
    cfg = cfg or EvalConfig()
    thresholds = dict(thresholds or {})
    extractor = get_extractor(cfg.feature_extractor)
    report = EvalReport(manifest={"seed": cfg.seed, "fpr": cfg.fpr, "n_images": len(dataset),
                                  "feature_extractor": cfg.feature_extractor,
                                  "backend": backend.manifest() if backend is not None else None})
    for scheme in schemes:
        key = scheme_key(scheme, cfg, backend)
        name = key.scheme
        if name not in thresholds:
            raise ValueError(f"no calibrated threshold for scheme {name!r}")
        phi = thresholds[name]
        report.thresholds[name] = float(phi)
        if nulls and name in nulls:
            report.null_scores[name] = [float(v) for v in nulls[name]]
        bitstream = key.scheme in BITSTREAM_SCHEMES or key.bits is not None
        try:
            originals, marked = marked_set(key, dataset, cfg, backend)
        except Exception as e:  # noqa: BLE001 - a scheme that cannot embed fails all its cells
            log.exception("embedding failed for %s", name)
            report.failures.append({"scheme": name, "attack": "*", "error": f"{type(e).__name__}: {e}"})
            continue
        marked_stats = frechet_stats(marked, extractor) if len(marked) > 1 else None

        for spec in [None, *attacks]:
            label = CLEAN if spec is None else spec.label
            try:
                recs, outs = [], []
                for i, xm in enumerate(marked):
                    if spec is None:
                        y, ref = xm, (originals[i] if originals is not None else None)
                    else:
                        y = _quantize(apply_attack(xm, spec, backend, cfg.seed, xm.source_id, cfg.raven))
                        ref = xm
                    outs.append(y)
                    stat, decoded = statistic(y, key, backend)
                    recs.append({
                        "scheme": name, "attack": label, "image_id": xm.source_id,
                        "condition": "clean_marked" if spec is None else "attacked_marked",
                        "statistic": float(stat), "detected": bool(stat > phi),
                        "bit_accuracy": float(np.mean(decoded == key.bits)) if decoded is not None and key.bits is not None else None,
                        "psnr": _finite(psnr(ref, y)) if ref is not None else None,
                        "ssim": ssim(ref, y) if ref is not None else None,
                    })
                if spec is None:
                    fid = frechet_distance(frechet_stats(outs, extractor), frechet_stats(originals, extractor)) \
                        if originals is not None and len(outs) > 1 else None
                else:
                    fid = frechet_distance(frechet_stats(outs, extractor), marked_stats) if marked_stats else None
            except Exception as e:  # noqa: BLE001 - recorded per cell, the grid keeps going
                log.exception("cell %s/%s failed", name, label)
                report.failures.append({"scheme": name, "attack": label, "error": f"{type(e).__name__}: {e}"})
                continue
            report.records.extend(recs)
            report.cells.extend(aggregate_cell(name, label, recs, fid, bitstream))
    return report


def load_report(path) -> dict:
    d = json.loads(Path(path).read_text())
    jsonschema.validate(d, REPORT_SCHEMA)
    return d
