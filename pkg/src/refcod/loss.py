# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Structure loss: BCE plus IoU summed over the four supervised maps.

Inputs are probability maps. Batched inputs (``B x 1 x H x W``) are reduced per
sample and then averaged over the batch; ``1 x H x W`` and ``H x W`` inputs are
treated as a single sample.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError
from .model import PredictionSet

BCE_EPS = 1e-7
IOU_SMOOTH = 1.0
# Edge-emphasis window of the weighted variant
WEIGHT_WINDOW = 31
WEIGHT_GAIN = 5.0

TERM_NAMES = ("m_scale_2", "m_scale_3", "m_scale_4", "m_seg")


def _check(p: torch.Tensor, g: torch.Tensor) -> None:
    if p.shape != g.shape:
        raise ShapeMismatchError(
            f"Prediction shape {tuple(p.shape)} does not match target {tuple(g.shape)}"
        )


def _per_sample(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(1, -1) if x.dim() <= 3 else x.flatten(1)


def bce_loss(p: torch.Tensor, g: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean binary cross-entropy of ``p`` clamped to ``[eps, 1 - eps]``."""
    _check(p, g)
    p = p.clamp(eps, 1.0 - eps)
    pixel = -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p))
    return _per_sample(pixel).mean(dim=1).mean()


def iou_loss(p: torch.Tensor, g: torch.Tensor, smooth: float = IOU_SMOOTH) -> torch.Tensor:
    """Smoothed soft IoU loss ``1 - (sum(pg) + s) / (sum(p) + sum(g) - sum(pg) + s)``."""
    _check(p, g)
    p, g = _per_sample(p), _per_sample(g)
    inter = (p * g).sum(dim=1)
    union = p.sum(dim=1) + g.sum(dim=1) - inter
    return (1.0 - (inter + smooth) / (union + smooth)).mean()


def edge_weights(g: torch.Tensor) -> torch.Tensor:
    """Pixel weights ``1 + 5 |avgpool31(g) - g|`` emphasising pixels near object boundaries."""
    batched = g if g.dim() == 4 else g.reshape(1, 1, *g.shape[-2:])
    pooled = F.avg_pool2d(
        batched, kernel_size=WEIGHT_WINDOW, stride=1, padding=WEIGHT_WINDOW // 2
    )
    return (1.0 + WEIGHT_GAIN * torch.abs(pooled - batched)).reshape(g.shape)


def weighted_bce_loss(p: torch.Tensor, g: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """BCE averaged with :func:`edge_weights` instead of uniformly."""
    _check(p, g)
    weights = _per_sample(edge_weights(g))
    p = p.clamp(eps, 1.0 - eps)
    pixel = _per_sample(-(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)))
    return ((weights * pixel).sum(dim=1) / weights.sum(dim=1)).mean()


def weighted_iou_loss(p: torch.Tensor, g: torch.Tensor, smooth: float = IOU_SMOOTH) -> torch.Tensor:
    """IoU loss with :func:`edge_weights` applied to every sum."""
    _check(p, g)
    weights = _per_sample(edge_weights(g))
    p, g = _per_sample(p), _per_sample(g)
    inter = (weights * p * g).sum(dim=1)
    union = (weights * (p + g)).sum(dim=1) - inter
    return (1.0 - (inter + smooth) / (union + smooth)).mean()


@dataclass
class LossReport:
    """Total loss and its itemised ``(bce, iou)`` terms, one pair per prediction.

    Attributes
    ----------
    total : torch.Tensor
        Scalar sum of every term (differentiable).
    per_term : list[tuple[torch.Tensor, torch.Tensor]]
        ``(bce, iou)`` for ``m_scale_2``, ``m_scale_3``, ``m_scale_4`` and ``m_seg``.
    """

    total: torch.Tensor
    per_term: list[tuple[torch.Tensor, torch.Tensor]]

    def is_finite(self) -> bool:
        """Return whether the total is neither NaN nor infinite."""
        return bool(torch.isfinite(self.total).item())

    def as_dict(self) -> dict[str, float]:
        """Return plain floats keyed ``total``, ``<map>_bce`` and ``<map>_iou``."""
        values = {"total": float(self.total.detach())}
        for name, (bce, iou) in zip(TERM_NAMES, self.per_term):
            values[f"{name}_bce"] = float(bce.detach())
            values[f"{name}_iou"] = float(iou.detach())
        return values


def structure_loss(
    pred: PredictionSet | list[torch.Tensor], g: torch.Tensor, weighted: bool = False
) -> LossReport:
    """Sum BCE and IoU over the four predictions against one ground truth.

    Parameters
    ----------
    pred : PredictionSet or list[torch.Tensor]
        Four probability maps.
    g : torch.Tensor
        Binary ground truth of the same shape as each map.
    weighted : bool, default False
        Use the boundary-weighted BCE and IoU variants.
    """
    maps = pred.as_list() if isinstance(pred, PredictionSet) else list(pred)
    if len(maps) != len(TERM_NAMES):
        raise ValueError(f"Expected {len(TERM_NAMES)} predictions, got {len(maps)}")
    bce_fn, iou_fn = (weighted_bce_loss, weighted_iou_loss) if weighted else (bce_loss, iou_loss)
    per_term = [(bce_fn(p, g), iou_fn(p, g)) for p in maps]
    total = torch.stack([bce + iou for bce, iou in per_term]).sum()
    return LossReport(total=total, per_term=per_term)
