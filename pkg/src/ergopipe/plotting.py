"""Report figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .reba import PART_NAMES, DeltaReport, Distribution, RiskCategory, risk_category  # noqa: E402

CATEGORY_COLORS = {
    RiskCategory.NEGLIGIBLE.value: "#4daf4a",
    RiskCategory.LOW.value: "#a6d96a",
    RiskCategory.MEDIUM.value: "#fee08b",
    RiskCategory.HIGH.value: "#f46d43",
    RiskCategory.VERY_HIGH.value: "#a50026",
}
METHOD_MARKERS = {"blur": "o", "noise": "s", "pixelate": "^", "gap": "*", "none": "D"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _category_of(score: int) -> str:
    return risk_category(score).value


def plot_reba_distribution(dist: Distribution, path, title: str = "REBA scores") -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8), gridspec_kw={"width_ratios": [2, 1]})
        scores = list(dist.score_counts)
        counts = [dist.score_counts[s] for s in scores]
        ax1.bar(scores, counts, color=[CATEGORY_COLORS[_category_of(s)] for s in scores])
        ax1.set_xlabel("REBA score")
        ax1.set_ylabel("count")
        ax1.set_xticks(range(1, 13))
        ax1.set_title(title)
        cats = [c.value for c in RiskCategory]
        ax2.bar(range(len(cats)), [dist.category_counts.get(c, 0) for c in cats],
                color=[CATEGORY_COLORS[c] for c in cats])
        ax2.set_xticks(range(len(cats)), cats, rotation=35, ha="right")
        ax2.set_ylabel("count")
        fig.tight_layout()
        return _save(fig, path)


def plot_reba_comparison(orig: Distribution, obf: Distribution, report: DeltaReport, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.5, 2.8))
        xs = np.arange(1, 13)
        w = 0.4
        ax1.bar(xs - w / 2, [orig.score_counts.get(int(x), 0) for x in xs], w, label="original")
        ax1.bar(xs + w / 2, [obf.score_counts.get(int(x), 0) for x in xs], w, label="obfuscated")
        ax1.set_xlabel("REBA score")
        ax1.set_ylabel("count")
        ax1.set_xticks(xs)
        ax1.legend(frameon=False)
        deltas = sorted({d for h in report.part_deltas.values() for d in h} | {0})
        bottom = np.zeros(len(PART_NAMES))
        cmap = plt.get_cmap("coolwarm")
        lo, hi = min(deltas), max(deltas)
        for d in deltas:
            vals = np.array([report.part_deltas[p].get(d, 0.0) for p in PART_NAMES])
            shade = 0.5 if hi == lo else (d - lo) / (hi - lo)
            ax2.bar(PART_NAMES, vals, bottom=bottom, color=cmap(shade), label=f"{d:+d}")
            bottom += vals
        ax2.set_ylabel("fraction")
        ax2.set_title("obfuscated - original")
        ax2.tick_params(axis="x", rotation=35)
        ax2.legend(frameon=False, ncol=2, title="delta")
        fig.tight_layout()
        return _save(fig, path)


def plot_tradeoff(records: Sequence[dict], path) -> Path:
    """Utility (AP) against privacy (1 - SSIM and PSNR) per method and intensity."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.5, 3.0), sharey=True)
        methods = sorted({r["method"] for r in records})
        for m in methods:
            rs = sorted((r for r in records if r["method"] == m), key=lambda r: r["intensity"])
            ap = [r["ap50"] for r in rs]
            marker = METHOD_MARKERS.get(m, "x")
            ax1.plot([1 - r["ssim"] for r in rs], ap, marker=marker, label=m)
            ax2.plot([min(r["psnr"], 60.0) for r in rs], ap, marker=marker, label=m)
        ax1.set_xlabel("1 - SSIM (higher = more private)")
        ax1.set_ylabel("AP @ OKS 0.5")
        ax2.set_xlabel("PSNR [dB] (lower = more private)")
        ax2.invert_xaxis()
        ax1.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_training_log(rows: Sequence, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ep = [r.epoch for r in rows]
        ax.plot(ep, [r.l_pose for r in rows], label="pose term")
        ax.plot(ep, [r.l_deobf for r in rows], label="reconstruction term")
        ax.plot(ep, [r.l_obf for r in rows], label="obfuscator loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_agreement(gt: Sequence[int], est: Sequence[int], path) -> Path:
    """Scatter of ground-truth against reconstructed REBA scores; marker area grows with the count."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 3.2))
        pairs: dict = {}
        for a, b in zip(gt, est):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
        if pairs:
            xy = np.array(sorted(pairs))
            ax.scatter(xy[:, 0], xy[:, 1], s=[12 * pairs[tuple(p)] for p in xy], alpha=0.7)
        ax.plot([1, 12], [1, 12], color="0.6", lw=0.8)
        ax.set_xlabel("REBA on generating skeleton")
        ax.set_ylabel("REBA after triangulation")
        fig.tight_layout()
        return _save(fig, path)
