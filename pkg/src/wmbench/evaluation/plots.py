from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import CLEAN  # noqa: E402

# Fixed metadata keeps PNG bytes reproducible across reruns.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def _scores(report: dict, scheme: str, attack: str):
    return np.array([r["statistic"] for r in report["records"] if r["scheme"] == scheme and r["attack"] == attack])


def score_histograms(report: dict, path) -> Path:
    schemes = sorted(report["thresholds"])
    fig, axes = plt.subplots(1, max(1, len(schemes)), figsize=(4 * max(1, len(schemes)), 3), squeeze=False)
    for ax, s in zip(axes[0], schemes):
        null = np.asarray(report["null_scores"].get(s, []))
        clean = _scores(report, s, CLEAN)
        bins = np.linspace(min(null.min(initial=0), clean.min(initial=0)), max(null.max(initial=1), clean.max(initial=1)), 30)
        if null.size:
            ax.hist(null, bins=bins, alpha=0.6, label="unmarked")
        ax.hist(clean, bins=bins, alpha=0.6, label="marked")
        ax.axvline(report["thresholds"][s], color="k", ls="--", lw=1, label="threshold")
        ax.set_title(s)
        ax.set_xlabel("statistic")
        ax.legend(fontsize=7)
    return _save(fig, path)


def roc_curves(report: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 4))
    for s in sorted(report["null_scores"]):
        null = np.asarray(report["null_scores"][s])
        attacks = sorted({r["attack"] for r in report["records"] if r["scheme"] == s})
        for a in attacks:
            pos = _scores(report, s, a)
            th = np.unique(np.concatenate([null, pos]))[::-1]
            fpr = [np.mean(null > t) for t in th] + [1.0]
            tpr = [np.mean(pos > t) for t in th] + [1.0]
            ax.plot([0.0] + fpr, [0.0] + tpr, lw=1, label=f"{s}/{a}")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.5)
    ax.set_xscale("symlog", linthresh=0.01)
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.legend(fontsize=6)
    return _save(fig, path)


def frechet_bars(report: dict, path) -> Path:
    cells = [c for c in report["cells"] if c["metric"] == "frechet" and c["attack"] != CLEAN and c["value"] is not None]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(cells) + 1), 3))
    labels = [f"{c['scheme']}\n{c['attack']}" for c in cells]
    ax.bar(range(len(cells)), [c["value"] for c in cells])
    ax.set_xticks(range(len(cells)))
    ax.set_xticklabels(labels, fontsize=6, rotation=45, ha="right")
    ax.set_ylabel("Frechet distance vs marked")
    return _save(fig, path)


def render_all(report: dict, outdir) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [
        score_histograms(report, outdir / "score_histograms.png"),
        roc_curves(report, outdir / "roc.png"),
        frechet_bars(report, outdir / "frechet.png"),
    ]
