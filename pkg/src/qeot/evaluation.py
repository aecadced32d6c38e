"""Decoding predictions to triples and scoring them.

Triple scoring groups boxes by exact (entity span, relation) key on
both sides, then Hungarian-matches the box lists of each shared key by
L1 distance; a matched pair counts as a true positive iff its IoU
exceeds the threshold, otherwise as a false positive. Surplus boxes
under a shared key count against the longer side (fp for predictions,
fn for gold). Keys present on only one side contribute their full box
count to fp or fn. Counters start at 1e-9 so that ratios are always
defined; reported metrics are not re-floored.

Pair scoring ignores boxes entirely and intersects the (span, relation)
multisets. Relation and entity accuracies are independent multiset
matches of a single field against the gold multiset.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import SyntheticSample, Triple
from .geometry import BoxCxCyWh, iou, to_xyxy
from .matcher import hungarian

COUNT_FLOOR = 1e-9


@dataclass(frozen=True)
class MetricsReport:
    triple_p: float
    triple_r: float
    triple_f1: float
    pair_p: float
    pair_r: float
    pair_f1: float
    rel_acc: float
    ent_acc: float

    def to_json(self) -> str:
        return json.dumps({
            "triple_p": self.triple_p, "triple_r": self.triple_r, "triple_f1": self.triple_f1,
            "pair_p": self.pair_p, "pair_r": self.pair_r, "pair_f1": self.pair_f1,
            "rel_acc": self.rel_acc, "ent_acc": self.ent_acc,
        })


def decode(output) -> list[Triple]:
    """Discrete triples from one sample's outputs.

    Per query: argmax relation over R+1 classes, dropping the empty
    class; argmax start and end positions with end clamped up to start;
    box passed through unchanged.
    """
    rel_logits = output.rel_logits.data
    start = output.start_dist.data
    end = output.end_dist.data
    boxes = output.boxes.data
    n_queries, n_classes = rel_logits.shape
    empty_idx = n_classes - 1
    triples: list[Triple] = []
    for q in range(n_queries):
        relation = int(np.argmax(rel_logits[q]))
        if relation == empty_idx:
            continue
        s = int(np.argmax(start[q]))
        e = int(np.argmax(end[q]))
        if e < s:
            e = s
        triples.append(Triple(s, e, relation, BoxCxCyWh(*(float(v) for v in boxes[q]))))
    return triples


def _group_by_key(triples: list[Triple]) -> dict[tuple[int, int, int], list[BoxCxCyWh]]:
    groups: dict[tuple[int, int, int], list[BoxCxCyWh]] = defaultdict(list)
    for t in triples:
        groups[(t.start, t.end, t.relation)].append(t.box)
    return groups


def triple_counts(pred: list[Triple], gold: list[Triple], iou_threshold: float
                  ) -> tuple[int, int, int]:
    """Raw (tp, fp, fn) counts of the box-matching triple evaluation."""
    pred_groups = _group_by_key(pred)
    gold_groups = _group_by_key(gold)
    tp = fp = fn = 0
    for key, gold_boxes in gold_groups.items():
        if key not in pred_groups:
            fn += len(gold_boxes)
            continue
        pred_boxes = pred_groups[key]
        cost = np.array([
            [float(np.abs(g.as_array() - p.as_array()).sum()) for p in pred_boxes]
            for g in gold_boxes
        ])
        if len(gold_boxes) <= len(pred_boxes):
            matched = hungarian(cost).pairs()
        else:
            matched = [(g, p) for p, g in hungarian(cost.T).pairs()]
        for g_i, p_i in matched:
            if iou(to_xyxy(pred_boxes[p_i]), to_xyxy(gold_boxes[g_i])) > iou_threshold:
                tp += 1
            else:
                fp += 1  # the prediction is wrong ...
                fn += 1  # ... and its gold box goes unrecovered
        fp += max(0, len(pred_boxes) - len(gold_boxes))
        fn += max(0, len(gold_boxes) - len(pred_boxes))
    for key, pred_boxes in pred_groups.items():
        if key not in gold_groups:
            fp += len(pred_boxes)
    return tp, fp, fn


def triple_fpr(pred: list[Triple], gold: list[Triple], iou_threshold: float = 0.5
               ) -> tuple[float, float, float]:
    """(tp, fp, fn) with the 1e-9 counter initialization."""
    tp, fp, fn = triple_counts(pred, gold, iou_threshold)
    return tp + COUNT_FLOOR, fp + COUNT_FLOOR, fn + COUNT_FLOOR


def pair_counts(pred: list[Triple], gold: list[Triple]) -> tuple[int, int, int]:
    """Multiset match on exact (span, relation) keys, boxes ignored."""
    pred_keys = Counter((t.start, t.end, t.relation) for t in pred)
    gold_keys = Counter((t.start, t.end, t.relation) for t in gold)
    tp = sum((pred_keys & gold_keys).values())
    return tp, len(pred) - tp, len(gold) - tp


pair_fpr = pair_counts


def accuracy_counts(pred: list[Triple], gold: list[Triple]) -> tuple[int, int]:
    """(matched relation count, matched span count) against the gold multisets."""
    rel_match = sum((Counter(t.relation for t in pred)
                     & Counter(t.relation for t in gold)).values())
    ent_match = sum((Counter((t.start, t.end) for t in pred)
                     & Counter((t.start, t.end) for t in gold)).values())
    return rel_match, ent_match


def accuracies(pred: list[Triple], gold: list[Triple], assignment_free: bool = True
               ) -> tuple[float, float]:
    """Fraction of gold relations / entity spans found among predictions.

    With assignment_free (the default) each field is matched as an
    independent multiset. Otherwise triples are first Hungarian-paired
    by box L1 distance and the fields of paired triples are compared.
    """
    if not gold:
        return 1.0, 1.0
    if assignment_free:
        rel_match, ent_match = accuracy_counts(pred, gold)
        return rel_match / len(gold), ent_match / len(gold)
    if not pred:
        return 0.0, 0.0
    cost = np.array([
        [float(np.abs(g.box.as_array() - p.box.as_array()).sum()) for p in pred]
        for g in gold
    ])
    if len(gold) <= len(pred):
        matched = hungarian(cost).pairs()
    else:
        matched = [(g, p) for p, g in hungarian(cost.T).pairs()]
    rel_match = sum(1 for g, p in matched if gold[g].relation == pred[p].relation)
    ent_match = sum(1 for g, p in matched
                    if (gold[g].start, gold[g].end) == (pred[p].start, pred[p].end))
    return rel_match / len(gold), ent_match / len(gold)


def _prf(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    p = tp / max(tp + fp, COUNT_FLOOR)
    r = tp / max(tp + fn, COUNT_FLOOR)
    f1 = 2.0 * p * r / max(p + r, COUNT_FLOOR)
    return p, r, f1


def evaluate_dataset(model, samples: list[SyntheticSample], iou_threshold: float = 0.5,
                     per_sample_path: str | None = None, batch_size: int = 32) -> MetricsReport:
    """Micro-averaged metrics over a dataset; optional per-sample JSONL dump."""
    t_tp = t_fp = t_fn = 0
    p_tp = p_fp = p_fn = 0
    rel_match = ent_match = gold_total = 0
    dump = open(per_sample_path, "w", encoding="utf-8") if per_sample_path else None
    try:
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            with ad.no_grad():
                forwarded = model.forward_batch(chunk)
            for sample, output in zip(chunk, forwarded.outputs):
                pred = decode(output)
                tp, fp, fn = triple_counts(pred, sample.gold, iou_threshold)
                ptp, pfp, pfn = pair_counts(pred, sample.gold)
                rm, em = accuracy_counts(pred, sample.gold)
                t_tp += tp; t_fp += fp; t_fn += fn
                p_tp += ptp; p_fp += pfp; p_fn += pfn
                rel_match += rm; ent_match += em; gold_total += len(sample.gold)
                if dump is not None:
                    dump.write(json.dumps({
                        "id": sample.id,
                        "pred": [
                            {"start": t.start, "end": t.end, "rel": t.relation,
                             "box": [t.box.cx, t.box.cy, t.box.w, t.box.h]}
                            for t in pred
                        ],
                        "tp": tp, "fp": fp, "fn": fn,
                    }) + "\n")
    finally:
        if dump is not None:
            dump.close()

    tri_p, tri_r, tri_f1 = _prf(t_tp + COUNT_FLOOR, t_fp + COUNT_FLOOR, t_fn + COUNT_FLOOR)
    pr_p, pr_r, pr_f1 = _prf(float(p_tp), float(p_fp), float(p_fn))
    return MetricsReport(
        triple_p=tri_p, triple_r=tri_r, triple_f1=tri_f1,
        pair_p=pr_p, pair_r=pr_r, pair_f1=pr_f1,
        rel_acc=rel_match / max(gold_total, 1),
        ent_acc=ent_match / max(gold_total, 1),
    )
