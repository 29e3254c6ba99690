"""Keypoint utility metrics (OKS, AP) and image fidelity metrics (PSNR, SSIM)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NUM_KEYPOINTS, ErgoError, GroundTruthPose, ImageBuffer, Pose2D, ShapeMismatch

log = logging.getLogger(__name__)

COCO17_KAPPA = (
    0.026,
    0.025, 0.025,
    0.035, 0.035,
    0.079, 0.079,
    0.072, 0.072,
    0.062, 0.062,
    0.107, 0.107,
    0.087, 0.087,
    0.089, 0.089,
)
BBOX_AREA_FACTOR = 0.53
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)


class NoLabeledKeypoints(ErgoError, ValueError):
    pass


class NonPositiveArea(ErgoError, ValueError):
    pass


class ImageTooSmall(ErgoError, ValueError):
    pass


@dataclass(frozen=True)
class OksConstants:
    kappa: tuple[float, ...] = COCO17_KAPPA

    def __post_init__(self):
        if not all(k > 0 for k in self.kappa):
            raise ValueError("kappa values must be positive")

    @classmethod
    def uniform(cls, k: float, n: int = NUM_KEYPOINTS) -> "OksConstants":
        return cls((k,) * n)


@dataclass
class EvalResult:
    ap: float
    threshold: float
    n_gt: int
    n_pred: int
    pr_curve: list[tuple[float, float]] = field(default_factory=list)


def oks(pred: Pose2D, gt: GroundTruthPose, consts: OksConstants = OksConstants(),
        area: float | None = None) -> float:
    """Object keypoint similarity between one prediction and one labeled pose.

    ``area`` overrides ``gt.segment_area`` (used for the bbox fallback).
    """
    vis = np.asarray(gt.visibility) > 0
    if not vis.any():
        raise NoLabeledKeypoints("ground truth has no labeled keypoints")
    s2 = gt.segment_area if area is None else area
    if s2 is None or not s2 > 0:
        raise NonPositiveArea(f"object area must be positive, got {s2}")
    kappa = np.asarray(consts.kappa, dtype=float)
    if len(kappa) != len(vis) or len(pred.keypoints) != len(vis):
        raise ShapeMismatch("keypoint count differs between prediction, ground truth and kappa")
    d2 = np.sum((pred.xy() - gt.xy_array()) ** 2, axis=1)
    e = np.exp(-d2 / (2.0 * s2 * kappa**2))
    return float(np.sum(e[vis]) / vis.sum())


def _object_area(gt: GroundTruthPose, pred: Pose2D) -> float:
    if gt.segment_area is not None:
        return gt.segment_area
    if pred.bbox_area is not None:
        return pred.bbox_area * BBOX_AREA_FACTOR
    raise NonPositiveArea("no segment area on the ground truth and no bbox area on the prediction")


def match_and_score(preds: Sequence[Pose2D], gts: Sequence[GroundTruthPose],
                    consts: OksConstants = OksConstants(), threshold: float = 0.5
                    ) -> list[tuple[int, bool]]:
    """Greedy COCO-style matching.

    Returns ``(pred_index, is_tp)`` in processing order (score descending, ties
    by input order).
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].detection_score)
    labeled = [i for i, g in enumerate(gts) if any(v > 0 for v in g.visibility)]
    taken: set[int] = set()
    out = []
    for i in order:
        best, best_j = -1.0, None
        for j in labeled:
            if j in taken:
                continue
            o = oks(preds[i], gts[j], consts, _object_area(gts[j], preds[i]))
            if o > best:
                best, best_j = o, j
        if best_j is not None and best >= threshold:
            taken.add(best_j)
            out.append((i, True))
        else:
            out.append((i, False))
    return out


def interpolated_ap(tp_flags: Sequence[bool], n_gt: int) -> tuple[float, list[tuple[float, float]]]:
    """101-point interpolated AP for TP flags already in score order."""
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=float))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    ap = math.fsum(q.tolist()) / len(RECALL_THRESHOLDS)
    return ap, list(zip(recall.tolist(), precision.tolist()))


def average_precision(preds: Sequence[Pose2D], gts: Sequence[GroundTruthPose],
                      consts: OksConstants = OksConstants(), threshold: float = 0.5) -> EvalResult:
    n_gt = sum(1 for g in gts if any(v > 0 for v in g.visibility))
    n_pred = len(preds)
    if n_gt == 0:
        if n_pred == 0:
            log.info("AP requested with no predictions and no ground truth; reporting 1.0")
            return EvalResult(1.0, threshold, 0, 0)
        return EvalResult(0.0, threshold, 0, n_pred)
    if n_pred == 0:
        return EvalResult(0.0, threshold, n_gt, 0)
    labels = match_and_score(preds, gts, consts, threshold)
    ap, curve = interpolated_ap([tp for _, tp in labels], n_gt)
    return EvalResult(ap, threshold, n_gt, n_pred, curve)


def average_precision_frames(frames: Sequence[tuple[Sequence[Pose2D], Sequence[GroundTruthPose]]],
                             consts: OksConstants = OksConstants(), threshold: float = 0.5
                             ) -> EvalResult:
    """AP pooled over many images: match per image, rank all detections globally."""
    scored = []
    n_gt = n_pred = 0
    for preds, gts in frames:
        n_gt += sum(1 for g in gts if any(v > 0 for v in g.visibility))
        n_pred += len(preds)
        for i, tp in match_and_score(preds, gts, consts, threshold):
            scored.append((-preds[i].detection_score, len(scored), tp))
    if n_gt == 0:
        return EvalResult(1.0 if n_pred == 0 else 0.0, threshold, 0, n_pred)
    if not scored:
        return EvalResult(0.0, threshold, n_gt, 0)
    scored.sort(key=lambda t: (t[0], t[1]))
    ap, curve = interpolated_ap([t[2] for t in scored], n_gt)
    return EvalResult(ap, threshold, n_gt, n_pred, curve)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = a.data if isinstance(a, ImageBuffer) else np.asarray(a)
    y = b.data if isinstance(b, ImageBuffer) else np.asarray(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"image shapes differ: {x.shape} vs {y.shape}")
    return x.astype(np.float64), y.astype(np.float64)


def psnr(a, b, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    x, y = _pair(a, b)
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ g


def ssim(a, b, peak: float = 255.0, win: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity, Gaussian-weighted, averaged over channels.

    The SSIM map is evaluated only where the window fits entirely inside the image.
    """
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if min(x.shape[0], x.shape[1]) < win:
        raise ImageTooSmall(f"SSIM needs at least {win}x{win} pixels")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window(win, sigma)
    vals = []
    for ch in range(x.shape[2]):
        xc, yc = x[:, :, ch], y[:, :, ch]
        mx, my = _filter_valid(xc, g), _filter_valid(yc, g)
        sxx = _filter_valid(xc * xc, g) - mx * mx
        syy = _filter_valid(yc * yc, g) - my * my
        sxy = _filter_valid(xc * yc, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))
