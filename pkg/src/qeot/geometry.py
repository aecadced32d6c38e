"""Axis-aligned boxes, IoU and generalized IoU.

Two parallel routes share the same formulas and the same 1e-9 area
floor: plain-float functions for the evaluation loops, and tensor
functions (differentiable) for the box losses. Boxes are parameterized
as normalized (cx, cy, w, h); corner form (x0, y0, x1, y1) is derived.

Degenerate cases: a zero-area union yields iou 0 and
giou = -(enclosing - 0)/enclosing; ties and clamps take subgradient 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

AREA_FLOOR = 1e-9


@dataclass(frozen=True)
class BoxCxCyWh:
    """Center/extent box, all components normalized to [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class BoxXyXy:
    """Corner box with x0 <= x1 and y0 <= y1."""

    x0: float
    y0: float
    x1: float
    y1: float


def to_xyxy(b: BoxCxCyWh) -> BoxXyXy:
    x0 = b.cx - b.w / 2.0
    x1 = b.cx + b.w / 2.0
    y0 = b.cy - b.h / 2.0
    y1 = b.cy + b.h / 2.0
    return BoxXyXy(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def iou(a: BoxXyXy, b: BoxXyXy) -> float:
    iw = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    ih = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = iw * ih
    union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter
    return inter / max(union, AREA_FLOOR)


def giou(a: BoxXyXy, b: BoxXyXy) -> float:
    iw = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    ih = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = iw * ih
    union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter
    enclose = (max(a.x1, b.x1) - min(a.x0, b.x0)) * (max(a.y1, b.y1) - min(a.y0, b.y0))
    return inter / max(union, AREA_FLOOR) - (enclose - union) / max(enclose, AREA_FLOOR)


def l1_box(pred: BoxCxCyWh, gold: BoxCxCyWh) -> float:
    """Sum of absolute coordinate differences in (cx, cy, w, h) space."""
    return float(np.abs(pred.as_array() - gold.as_array()).sum())


def giou_loss(pred: BoxCxCyWh, gold: BoxCxCyWh) -> float:
    return 1.0 - giou(to_xyxy(pred), to_xyxy(gold))


# ---------------------------------------------------------------------------
# Differentiable route: boxes as Tensors of shape (..., 4) in cxcywh form.


def _corners_t(b: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    half_w = b[..., 2] * 0.5
    half_h = b[..., 3] * 0.5
    return b[..., 0] - half_w, b[..., 1] - half_h, b[..., 0] + half_w, b[..., 1] + half_h


def giou_t(pred: Tensor, gold: Tensor) -> Tensor:
    """Generalized IoU of (..., 4) cxcywh boxes, elementwise over rows."""
    px0, py0, px1, py1 = _corners_t(pred)
    gx0, gy0, gx1, gy1 = _corners_t(gold)
    zero = Tensor(0.0)
    iw = ad.maximum(ad.minimum(px1, gx1) - ad.maximum(px0, gx0), zero)
    ih = ad.maximum(ad.minimum(py1, gy1) - ad.maximum(py0, gy0), zero)
    inter = iw * ih
    union = (px1 - px0) * (py1 - py0) + (gx1 - gx0) * (gy1 - gy0) - inter
    enclose = (ad.maximum(px1, gx1) - ad.minimum(px0, gx0)) \
        * (ad.maximum(py1, gy1) - ad.minimum(py0, gy0))
    floor = Tensor(AREA_FLOOR)
    return inter / ad.maximum(union, floor) - (enclose - union) / ad.maximum(enclose, floor)


def giou_loss_t(pred: Tensor, gold: Tensor) -> Tensor:
    """1 - giou per box row; value in [0, 2]."""
    return 1.0 - giou_t(pred, gold)


def l1_box_t(pred: Tensor, gold: Tensor) -> Tensor:
    """Per-row L1 distance between (..., 4) cxcywh boxes."""
    return ad.tsum(ad.absolute(pred - gold), axis=-1)
