# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Camouflaged object detection metrics.

All measures take a prediction map ``p`` in [0, 1] and a ground-truth map ``g``
(binarised at 0.5) of equal shape, and compute in double precision. Leading
singleton axes are ignored, so ``1 x H x W`` and ``H x W`` inputs are accepted.

Degenerate ground truth follows the published conventions of each measure:

- S-measure: all-background GT gives ``1 - mean(p)``, all-foreground GT ``mean(p)``.
- E-measure: all-background GT scores the predicted background fraction,
  all-foreground GT the predicted foreground fraction.
- Weighted F-measure is undefined on all-background GT and raises
  :class:`~refcod.errors.UndefinedMetricError`; accumulators count it as skipped.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.ndimage import convolve
from scipy.ndimage import distance_transform_edt

from .errors import EmptyListError, ShapeMismatchError, UndefinedMetricError

logger = logging.getLogger(__name__)

EPS = np.spacing(1)
# F-beta weight of the precision/recall curves
CURVE_BETA2 = 0.3
WF_BETA2 = 1.0
N_THRESHOLDS = 256


def _prepare(p: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(p, g)`` as 2-D float64 / bool arrays of equal shape."""
    pred = np.asarray(p, dtype=np.float64)
    gt = np.asarray(g, dtype=np.float64)
    while pred.ndim > 2 and pred.shape[0] == 1:
        pred = pred[0]
    while gt.ndim > 2 and gt.shape[0] == 1:
        gt = gt[0]
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeMismatchError(
            f"Prediction shape {np.shape(p)} does not match ground truth {np.shape(g)}"
        )
    return pred, gt > 0.5


def mae(p: np.ndarray, g: np.ndarray) -> float:
    """Mean absolute error between ``p`` and the binarised ``g``."""
    pred, gt = _prepare(p, g)
    return float(np.mean(np.abs(pred - gt)))


def s_measure(p: np.ndarray, g: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * S_object + (1 - alpha) * S_region``.

    Parameters
    ----------
    p : numpy.ndarray
        Prediction in [0, 1].
    g : numpy.ndarray
        Ground truth.
    alpha : float, default 0.5
        Balance between the object and the region term.

    Returns
    -------
    float
        Score in [0, 1].
    """
    pred, gt = _prepare(p, g)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _object_score(pred, gt) + (1.0 - alpha) * _region_score(pred, gt)
    return float(min(max(score, 0.0), 1.0))


def _object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = pred * gt
    bg = (1.0 - pred) * ~gt
    u = gt.mean()
    return u * _s_object(fg, gt) + (1.0 - u) * _s_object(bg, ~gt)


def _s_object(values: np.ndarray, region: np.ndarray) -> float:
    inside = values[region]
    x = inside.mean()
    sigma = inside.std(ddof=1) if inside.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """Split point ``(x, y)`` of the region term, rounded as in the reference code."""
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    x, y = min(x, w), min(y, h)
    area = h * w
    w1 = x * y / area
    w2 = y * (w - x) / area
    w3 = (h - y) * x / area
    w4 = 1.0 - w1 - w2 - w3
    blocks = [
        (pred[:y, :x], gt[:y, :x], w1),
        (pred[:y, x:], gt[:y, x:], w2),
        (pred[y:, :x], gt[y:, :x], w3),
        (pred[y:, x:], gt[y:, x:], w4),
    ]
    return sum(weight * _ssim(bp, bg) for bp, bg, weight in blocks if bp.size > 0)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    gt = gt.astype(np.float64)
    n = pred.size
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sigma_x = np.sum((pred - x) ** 2) / denom
    sigma_y = np.sum((gt - y) ** 2) / denom
    sigma_xy = np.sum((pred - x) * (gt - y)) / denom
    a = 4.0 * x * y * sigma_xy
    b = (x * x + y * y) * (sigma_x + sigma_y)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def adaptive_threshold(p: np.ndarray) -> float:
    """Return ``min(2 * mean(p), 1)``."""
    return float(min(2.0 * np.mean(p), 1.0))


def e_measure_adaptive(p: np.ndarray, g: np.ndarray) -> float:
    """Enhanced-alignment measure of ``p`` binarised at its adaptive threshold.

    A threshold of 0 (an all-zero prediction) binarises with ``p > 0`` so that
    an empty prediction stays empty.
    """
    pred, gt = _prepare(p, g)
    threshold = adaptive_threshold(pred)
    binary = pred > 0 if threshold == 0 else pred >= threshold
    return enhanced_alignment(binary, gt)


def enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> float:
    """E-measure of a binary prediction against binary ground truth.

    The alignment matrix only takes four distinct values (one per combination of
    predicted and true label), so the sum runs over those four pixel counts.
    """
    binary = np.asarray(binary, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    n = gt.size
    gt_fg = np.count_nonzero(gt)
    pred_fg = np.count_nonzero(binary)
    if gt_fg == 0:
        return float((n - pred_fg) / n)
    if gt_fg == n:
        return float(pred_fg / n)

    fg_fg = np.count_nonzero(binary & gt)
    fg_bg = pred_fg - fg_fg
    bg_fg = gt_fg - fg_fg
    bg_bg = n - pred_fg - bg_fg
    mean_pred = pred_fg / n
    mean_gt = gt_fg / n
    parts = [
        (fg_fg, 1.0 - mean_pred, 1.0 - mean_gt),
        (fg_bg, 1.0 - mean_pred, -mean_gt),
        (bg_fg, -mean_pred, 1.0 - mean_gt),
        (bg_bg, -mean_pred, -mean_gt),
    ]
    total = 0.0
    for count, dp, dg in parts:
        align = 2.0 * dp * dg / (dp * dp + dg * dg + EPS)
        total += count * (align + 1.0) ** 2 / 4.0
    return float(total / n)


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2
    y, x = np.ogrid[-half : half + 1, -half : half + 1]
    kernel = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    kernel[kernel < np.finfo(kernel.dtype).eps * kernel.max()] = 0
    return kernel / kernel.sum()


def weighted_f_measure(p: np.ndarray, g: np.ndarray, beta2: float = WF_BETA2) -> float:
    """Weighted F-measure with Gaussian pixel dependency and distance-based importance.

    Raises
    ------
    UndefinedMetricError
        If the ground truth has no foreground pixel.
    """
    pred, gt = _prepare(p, g)
    if not gt.any():
        raise UndefinedMetricError("Weighted F-measure is undefined for an empty ground truth")

    dist, (iy, ix) = distance_transform_edt(~gt, return_indices=True)
    error = np.abs(pred - gt)
    # Background errors take the error of their nearest foreground pixel
    error_t = error.copy()
    error_t[~gt] = error[iy[~gt], ix[~gt]]
    smoothed = convolve(error_t, weights=_gaussian_kernel(), mode="constant", cval=0.0)
    min_error = np.where(gt & (smoothed < error), smoothed, error)
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    weighted = min_error * importance

    tp = gt.sum() - weighted[gt].sum()
    fp = weighted[~gt].sum()
    recall = 1.0 - weighted[gt].mean()
    precision = tp / (tp + fp + EPS)
    score = (1.0 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return float(min(max(score, 0.0), 1.0))


@dataclass
class CurveData:
    """Dataset-level precision/recall and F-beta over 256 thresholds."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_beta: np.ndarray

    def rows(self) -> list[tuple[float, float, float, float]]:
        """Return ``(threshold, precision, recall, fbeta)`` rows."""
        return [
            (float(t), float(p), float(r), float(f))
            for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f_beta)
        ]


THRESHOLDS = np.arange(N_THRESHOLDS, dtype=np.float64) / (N_THRESHOLDS - 1)


@dataclass
class CurveAccumulator:
    """Running TP/FP counts per threshold; a pixel is positive when ``p >= t``."""

    tp: np.ndarray = field(default_factory=lambda: np.zeros(N_THRESHOLDS))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(N_THRESHOLDS))
    positives: int = 0
    count: int = 0

    def step(self, p: np.ndarray, g: np.ndarray) -> None:
        """Add one prediction/ground-truth pair."""
        pred, gt = _prepare(p, g)
        fg = np.sort(pred[gt])
        bg = np.sort(pred[~gt])
        self.tp += fg.size - np.searchsorted(fg, THRESHOLDS, side="left")
        self.fp += bg.size - np.searchsorted(bg, THRESHOLDS, side="left")
        self.positives += fg.size
        self.count += 1

    def result(self) -> CurveData:
        """Return precision, recall and F-beta (beta^2 = 0.3) per threshold.

        Precision and recall with a zero denominator are defined as 1.
        """
        if self.count == 0:
            raise EmptyListError("Curves need at least one prediction")
        tp, fp = self.tp, self.fp
        fn = self.positives - tp
        with np.errstate(divide="ignore", invalid="ignore"):
            precision = np.where(tp + fp > 0, tp / (tp + fp), 1.0)
            recall = np.where(tp + fn > 0, tp / (tp + fn), 1.0)
            denom = CURVE_BETA2 * precision + recall
            f_beta = np.where(denom > 0, (1 + CURVE_BETA2) * precision * recall / denom, 0.0)
        return CurveData(
            thresholds=THRESHOLDS.copy(), precision=precision, recall=recall, f_beta=f_beta
        )


def compute_curves(predictions: list[np.ndarray], gts: list[np.ndarray]) -> CurveData:
    """Accumulate TP/FP/FN over a whole set at thresholds ``0/255 .. 255/255``.

    Raises
    ------
    EmptyListError
        If no prediction is given.
    ShapeMismatchError
        If the lists differ in length or a pair differs in shape.
    """
    if not predictions:
        raise EmptyListError("compute_curves needs at least one prediction")
    if len(predictions) != len(gts):
        raise ShapeMismatchError(f"{len(predictions)} predictions but {len(gts)} ground truths")
    accumulator = CurveAccumulator()
    for p, g in zip(predictions, gts):
        accumulator.step(p, g)
    return accumulator.result()


@dataclass
class MetricsReport:
    """Set-level averages of the four measures.

    Attributes
    ----------
    s_measure : float
        Mean S-measure.
    e_measure_adaptive : float
        Mean adaptive E-measure.
    weighted_f : float
        Mean weighted F-measure over images with non-empty ground truth.
    mae : float
        Mean absolute error.
    n_images : int
        Number of evaluated images.
    wf_skipped : int
        Images left out of ``weighted_f`` because their ground truth is empty.
    """

    s_measure: float
    e_measure_adaptive: float
    weighted_f: float
    mae: float
    n_images: int
    wf_skipped: int = 0

    def to_dict(self) -> dict[str, Any]:
        """Return the report under its serialised keys."""
        return {
            "sm": self.s_measure,
            "ae": self.e_measure_adaptive,
            "wf": self.weighted_f,
            "mae": self.mae,
            "n": self.n_images,
            "wf_skipped": self.wf_skipped,
        }

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        """Average several reports of the same image set (one per reference draw)."""
        if not reports:
            raise EmptyListError("Cannot average zero reports")
        return cls(
            s_measure=float(np.mean([r.s_measure for r in reports])),
            e_measure_adaptive=float(np.mean([r.e_measure_adaptive for r in reports])),
            weighted_f=float(np.mean([r.weighted_f for r in reports])),
            mae=float(np.mean([r.mae for r in reports])),
            n_images=reports[0].n_images,
            wf_skipped=reports[0].wf_skipped,
        )


@dataclass
class MetricAccumulator:
    """Collects per-image scores and averages them (sum, then divide)."""

    sms: list[float] = field(default_factory=list)
    ems: list[float] = field(default_factory=list)
    wfs: list[float] = field(default_factory=list)
    maes: list[float] = field(default_factory=list)
    wf_skipped: int = 0

    def step(self, p: np.ndarray, g: np.ndarray) -> dict[str, float | None]:
        """Score one image and return its per-image values (``wf`` is ``None`` if skipped)."""
        wf: float | None
        try:
            wf = weighted_f_measure(p, g)
        except UndefinedMetricError:
            wf = None
            self.wf_skipped += 1
        else:
            self.wfs.append(wf)
        scores = {
            "sm": s_measure(p, g),
            "ae": e_measure_adaptive(p, g),
            "wf": wf,
            "mae": mae(p, g),
        }
        self.sms.append(scores["sm"])
        self.ems.append(scores["ae"])
        self.maes.append(scores["mae"])
        return scores

    def __len__(self) -> int:
        return len(self.sms)

    def report(self) -> MetricsReport:
        """Average the collected scores.

        Raises
        ------
        EmptyListError
            If no image was scored.
        """
        if not self.sms:
            raise EmptyListError("No images were evaluated")
        if self.wf_skipped:
            logger.info(f"Weighted F-measure skipped {self.wf_skipped} image(s) with empty GT")
        return MetricsReport(
            s_measure=float(np.mean(self.sms)),
            e_measure_adaptive=float(np.mean(self.ems)),
            weighted_f=float(np.mean(self.wfs)) if self.wfs else 0.0,
            mae=float(np.mean(self.maes)),
            n_images=len(self.sms),
            wf_skipped=self.wf_skipped,
        )
