"""Box math: conversion, IoU/GIoU fixtures, properties, gradients."""

import numpy as np
import pytest

from qeot import autodiff as ad
from qeot.autodiff import Tensor
from qeot.geometry import (BoxCxCyWh, BoxXyXy, giou, giou_loss, giou_loss_t,
                           giou_t, iou, l1_box, l1_box_t, to_xyxy)


def random_boxes(n, seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    cx, cy = rng.uniform(lo, hi, (2, n))
    w, h = rng.uniform(0.0, hi - lo, (2, n))
    return [BoxCxCyWh(cx[i], cy[i], w[i], h[i]) for i in range(n)]


class TestToXyxy:
    def test_full_frame(self):
        assert to_xyxy(BoxCxCyWh(0.5, 0.5, 1, 1)) == BoxXyXy(0, 0, 1, 1)

    def test_degenerate_point(self):
        assert to_xyxy(BoxCxCyWh(0.5, 0.5, 0, 0)) == BoxXyXy(0.5, 0.5, 0.5, 0.5)

    def test_quarter(self):
        assert to_xyxy(BoxCxCyWh(0.25, 0.25, 0.5, 0.5)) == BoxXyXy(0, 0, 0.5, 0.5)

    def test_ordering_invariant(self):
        for b in random_boxes(100, seed=1):
            xy = to_xyxy(b)
            assert xy.x0 <= xy.x1 and xy.y0 <= xy.y1


class TestIou:
    def test_identical(self):
        assert iou(BoxXyXy(0, 0, 1, 1), BoxXyXy(0, 0, 1, 1)) == 1.0

    def test_disjoint(self):
        assert iou(BoxXyXy(0, 0, 1, 1), BoxXyXy(2, 2, 3, 3)) == 0.0

    def test_one_seventh(self):
        # inter 1 (the unit overlap square), union 4 + 4 - 1 = 7
        assert iou(BoxXyXy(0, 0, 2, 2), BoxXyXy(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-9)

    def test_degenerate_union_is_zero(self):
        a = BoxXyXy(0.2, 0.2, 0.2, 0.2)
        b = BoxXyXy(0.7, 0.7, 0.7, 0.7)
        assert iou(a, b) == 0.0


class TestGiou:
    def test_identical(self):
        assert giou(BoxXyXy(0, 0, 1, 1), BoxXyXy(0, 0, 1, 1)) == 1.0

    def test_corner_touching(self):
        # enclosing 4, union 2, iou 0 -> 0 - 2/4
        assert giou(BoxXyXy(0, 0, 1, 1), BoxXyXy(1, 1, 2, 2)) == pytest.approx(-0.5, abs=1e-9)

    def test_far_separation_approaches_minus_one(self):
        assert giou(BoxXyXy(0, 0, 1, 1), BoxXyXy(100, 0, 101, 1)) < -0.9

    def test_symmetric(self):
        boxes = random_boxes(200, seed=2)
        for a, b in zip(boxes[::2], boxes[1::2]):
            assert giou(to_xyxy(a), to_xyxy(b)) == giou(to_xyxy(b), to_xyxy(a))

    def test_giou_never_exceeds_iou(self):
        boxes = random_boxes(20000, seed=3)
        for a, b in zip(boxes[::2], boxes[1::2]):
            xa, xb = to_xyxy(a), to_xyxy(b)
            assert giou(xa, xb) <= iou(xa, xb) + 1e-12

    def test_equal_when_enclosing_equals_union(self):
        # aligned nested boxes: enclosing box == outer box == union region
        outer = BoxXyXy(0.0, 0.0, 1.0, 1.0)
        inner = BoxXyXy(0.25, 0.25, 0.75, 0.75)
        assert giou(outer, inner) == iou(outer, inner)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)

        def rand_xyxy():
            x0, x1 = np.sort(rng.uniform(0, 1, 2))
            y0, y1 = np.sort(rng.uniform(0, 1, 2))
            return BoxXyXy(x0, y0, x1, y1)

        def scaled(b, s):
            return BoxXyXy(b.x0 * s, b.y0 * s, b.x1 * s, b.y1 * s)

        for _ in range(200):
            a, b = rand_xyxy(), rand_xyxy()
            s = rng.uniform(0.1, 10.0)
            assert iou(scaled(a, s), scaled(b, s)) == pytest.approx(iou(a, b), abs=1e-9)
            assert giou(scaled(a, s), scaled(b, s)) == pytest.approx(giou(a, b), abs=1e-9)


class TestGiouLoss:
    def test_identical_boxes_zero(self):
        b = BoxCxCyWh(0.3, 0.4, 0.2, 0.2)
        assert giou_loss(b, b) == 0.0

    def test_corner_pair_one_point_five(self):
        # giou -0.5 pair in cxcywh form
        a = BoxCxCyWh(0.5, 0.5, 1, 1)
        b = BoxCxCyWh(1.5, 1.5, 1, 1)
        assert giou_loss(a, b) == pytest.approx(1.5, abs=1e-9)

    def test_range(self):
        boxes = random_boxes(2000, seed=5)
        for a, b in zip(boxes[::2], boxes[1::2]):
            assert 0.0 <= giou_loss(a, b) <= 2.0

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(6)
        pred = Tensor(np.column_stack([rng.uniform(0.2, 0.8, 8), rng.uniform(0.2, 0.8, 8),
                                       rng.uniform(0.1, 0.5, 8), rng.uniform(0.1, 0.5, 8)]),
                      requires_grad=True)
        gold = Tensor(np.column_stack([rng.uniform(0.2, 0.8, 8), rng.uniform(0.2, 0.8, 8),
                                       rng.uniform(0.1, 0.5, 8), rng.uniform(0.1, 0.5, 8)]))
        rep = ad.grad_check(lambda: ad.tsum(giou_loss_t(pred, gold)), [("pred", pred)])
        assert rep.max_rel_err < 1e-4, rep


class TestL1Box:
    def test_identical(self):
        b = BoxCxCyWh(0.1, 0.2, 0.3, 0.4)
        assert l1_box(b, b) == 0.0

    def test_max_distance(self):
        assert l1_box(BoxCxCyWh(0, 0, 0, 0), BoxCxCyWh(1, 1, 1, 1)) == 4.0

    def test_arithmetic(self):
        a = BoxCxCyWh(0.1, 0.2, 0.3, 0.4)
        b = BoxCxCyWh(0.2, 0.2, 0.3, 0.5)
        assert l1_box(a, b) == pytest.approx(0.2, abs=1e-12)

    def test_range(self):
        for a, b in zip(random_boxes(200, seed=7), random_boxes(200, seed=8)):
            assert 0.0 <= l1_box(a, b) <= 4.0


class TestTensorFloatAgreement:
    def test_routes_agree(self):
        """The differentiable route must reproduce the float route."""
        pa = random_boxes(500, seed=9)
        pb = random_boxes(500, seed=10)
        pred = Tensor(np.array([b.as_array() for b in pa]))
        gold = Tensor(np.array([b.as_array() for b in pb]))
        g_t = giou_t(pred, gold).data
        l_t = l1_box_t(pred, gold).data
        for i, (a, b) in enumerate(zip(pa, pb)):
            assert g_t[i] == pytest.approx(giou(to_xyxy(a), to_xyxy(b)), abs=1e-12)
            assert l_t[i] == pytest.approx(l1_box(a, b), abs=1e-12)
