"""Hungarian-matched joint objective and the training step.

Per sample: the match between gold triples and queries is computed on
detached outputs (no gradients), then four differentiable terms are
assembled — relation cross-entropy over all queries (unmatched queries
target the empty class), start/end cross-entropy for matched queries,
and L1 + generalized-IoU box losses for matched queries. Matched terms
are summed in ascending query order, which makes the total exactly
invariant to permutations of the gold list.

A batch reduces as mean-over-samples of sum-over-terms-within-sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError
from .geometry import giou_loss_t, l1_box_t
from .matcher import Assignment, hungarian, match_cost, _cost_matrix
from .optim import AdamW


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for (entity, relation, box-L1, box-giou) terms."""

    ent: float = 1.0
    rel: float = 2.0
    l1: float = 3.0
    giou: float = 3.5

    def __post_init__(self):
        if min(self.ent, self.rel, self.l1, self.giou) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    total: float
    ent: float
    rel: float
    l1: float
    giou: float
    assignment: Assignment
    matched_pairs: list[tuple[int, int]]  # (gold index, query index)
    total_t: Tensor = field(repr=False)


def _matched_pairs(output, gold, weights) -> tuple[Assignment, list[tuple[int, int]]]:
    """Hungarian match on detached outputs; handles the overfull case
    (more gold triples than queries) by assigning each query its best
    distinct gold triple and leaving the surplus unsupervised."""
    n_queries = output.rel_logits.shape[0]
    cost = _cost_matrix(output, gold, weights)
    if len(gold) <= n_queries:
        assignment = hungarian(cost)
        pairs = [(i, j) for i, j in assignment.pairs()]
    else:
        assignment = hungarian(cost.T)
        pairs = [(i, j) for j, i in assignment.pairs()]
    pairs.sort(key=lambda p: p[1])
    return assignment, pairs


def joint_loss(output, gold, weights: LossWeights, empty_class_weight: float = 1.0) -> LossBreakdown:
    """Matched joint loss for one sample's predictions."""
    n_queries, n_rel_classes = output.rel_logits.shape
    empty_idx = n_rel_classes - 1

    if gold:
        assignment, pairs = _matched_pairs(output, gold, weights)
    else:
        assignment, pairs = Assignment((), 0.0), []

    rel_targets = np.full(n_queries, empty_idx, dtype=np.intp)
    for i, j in pairs:
        rel_targets[j] = gold[i].relation
    picked = ad.pick(output.log_rel, np.arange(n_queries, dtype=np.intp), rel_targets)
    if empty_class_weight == 1.0:
        rel_t = -ad.tmean(picked)
    else:
        w = np.where(rel_targets == empty_idx, empty_class_weight, 1.0)
        rel_t = -ad.tsum(picked * Tensor(w)) * (1.0 / float(w.sum()))

    if pairs:
        rows = np.array([j for _, j in pairs], dtype=np.intp)
        starts = np.array([gold[i].start for i, _ in pairs], dtype=np.intp)
        ends = np.array([gold[i].end for i, _ in pairs], dtype=np.intp)
        ent_t = -(ad.tsum(ad.pick(output.log_start, rows, starts))
                  + ad.tsum(ad.pick(output.log_end, rows, ends))) * (1.0 / (2 * len(pairs)))
        pred_boxes = ad.pick(output.boxes, rows)
        gold_boxes = Tensor(np.array([gold[i].box.as_array() for i, _ in pairs]))
        l1_t = ad.tmean(l1_box_t(pred_boxes, gold_boxes))
        giou_t = ad.tmean(giou_loss_t(pred_boxes, gold_boxes))
    else:
        ent_t = Tensor(0.0)
        l1_t = Tensor(0.0)
        giou_t = Tensor(0.0)

    total_t = weights.ent * ent_t + weights.rel * rel_t + weights.l1 * l1_t + weights.giou * giou_t
    return LossBreakdown(
        total=total_t.item(), ent=ent_t.item(), rel=rel_t.item(),
        l1=l1_t.item(), giou=giou_t.item(),
        assignment=assignment, matched_pairs=pairs, total_t=total_t,
    )


def batch_loss(outputs, samples, weights: LossWeights,
               empty_class_weight: float = 1.0) -> tuple[Tensor, list[LossBreakdown]]:
    """Mean of per-sample totals; raises NumericError naming a bad sample."""
    breakdowns = []
    totals = []
    for sample, output in zip(samples, outputs):
        lb = joint_loss(output, sample.gold, weights, empty_class_weight)
        if not math.isfinite(lb.total):
            raise NumericError(f"non-finite loss for sample {sample.id}")
        breakdowns.append(lb)
        totals.append(ad.reshape(lb.total_t, (1,)))
    return ad.tmean(ad.concat(totals, axis=0)), breakdowns


def train_step(model, batch, weights: LossWeights, optimizer: AdamW,
               empty_class_weight: float = 1.0) -> list[LossBreakdown]:
    """One forward/backward/update over a batch of samples."""
    with ad.tape():
        forwarded = model.forward_batch(batch)
        total, breakdowns = batch_loss(forwarded.outputs, batch, weights, empty_class_weight)
        model.zero_grad()
        ad.backward(total)
    optimizer.step(model.parameters())
    return breakdowns


__all__ = ["LossWeights", "LossBreakdown", "joint_loss", "batch_loss", "train_step",
           "match_cost"]
