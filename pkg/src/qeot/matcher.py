"""Optimal one-to-one assignment of gold triples to predicted queries.

The cost matrix has one row per gold triple and one column per query;
`hungarian` returns the minimum-total-cost injection of rows into
columns. Among cost-equal optima the lexicographically smallest column
sequence (scanning rows in order) is returned, so results are
deterministic and match `brute_force_assignment` exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ContractError
from .geometry import BoxCxCyWh, giou, l1_box, to_xyxy

BRUTE_FORCE_MAX_COLS = 8


@dataclass(frozen=True)
class Assignment:
    """row -> column injection with its total cost."""

    col_of_row: tuple[int, ...]
    total_cost: float

    def pairs(self) -> list[tuple[int, int]]:
        return list(enumerate(self.col_of_row))


def match_cost(output, gold, weights) -> np.ndarray:
    """Cost matrix entry (i, j) for gold triple i against query j:

        -p_ent_j(e_i) - p_rel_j(r_i)
        + w_giou * (1 - giou(b_i, b_j)) + w_l1 * |b_i - b_j|_1

    where p_ent is the product of the query's start/end probabilities at
    the gold span and p_rel its softmaxed probability of the gold
    relation. Computed on detached values; no gradients are recorded.
    """
    n_queries = output.start_dist.data.shape[0]
    if len(gold) > n_queries:
        raise CapacityError(
            f"{len(gold)} gold triples but only {n_queries} queries; increase the query count")
    return _cost_matrix(output, gold, weights)


def _cost_matrix(output, gold, weights) -> np.ndarray:
    """match_cost without the capacity guard (the training loss matches
    transposed when gold outnumbers the queries)."""
    n_gold = len(gold)
    start = output.start_dist.data
    end = output.end_dist.data
    boxes = output.boxes.data
    n_queries = start.shape[0]
    logits = output.rel_logits.data
    shifted = logits - logits.max(axis=-1, keepdims=True)
    rel_prob = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)

    cost = np.zeros((n_gold, n_queries), dtype=np.float64)
    for i, t in enumerate(gold):
        p_ent = start[:, t.start] * end[:, t.end]
        p_rel = rel_prob[:, t.relation]
        gold_xy = to_xyxy(t.box)
        for j in range(n_queries):
            pred_box = BoxCxCyWh(*boxes[j])
            cost[i, j] = (
                -p_ent[j]
                - p_rel[j]
                + weights.giou * (1.0 - giou(to_xyxy(pred_box), gold_xy))
                + weights.l1 * l1_box(pred_box, t.box)
            )
    return cost


def _min_total(cost: np.ndarray) -> float:
    """Minimum assignment total for rows <= cols (shortest augmenting paths)."""
    n_rows, n_cols = cost.shape
    inf = math.inf
    u = [0.0] * (n_rows + 1)
    v = [0.0] * (n_cols + 1)
    match_col = [0] * (n_cols + 1)  # 1-based row matched to column, 0 = free
    for i in range(1, n_rows + 1):
        match_col[0] = i
        j0 = 0
        minv = [inf] * (n_cols + 1)
        used = [False] * (n_cols + 1)
        way = [0] * (n_cols + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n_cols + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n_cols + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    total = 0.0
    col_of_row = [0] * n_rows
    for j in range(1, n_cols + 1):
        if match_col[j]:
            col_of_row[match_col[j] - 1] = j - 1
    for i in range(n_rows):
        total += cost[i, col_of_row[i]]
    return total


def hungarian(cost: np.ndarray) -> Assignment:
    """Lexicographically-first minimum-cost injection of rows into columns."""
    cost = np.asarray(cost, dtype=np.float64)
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise CapacityError(
            f"cost matrix has {n_rows} rows but only {n_cols} columns; increase the query count")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix contains non-finite entries")

    # Fix each row in order to the smallest column that still admits an
    # optimal completion; ties then resolve lexicographically by
    # construction. Subproblems are solved exactly, so the final total
    # equals the global optimum. Candidates whose relaxed lower bound
    # (per-row column minima, ignoring the injection constraint) already
    # exceeds the best exact total are skipped without a subsolve.
    available = list(range(n_cols))
    chosen: list[int] = []
    prefix = 0.0
    for i in range(n_rows):
        rest_rows = range(i + 1, n_rows)
        sub_all = cost[np.ix_(rest_rows, available)]
        if sub_all.shape[0]:
            order = np.argsort(sub_all, axis=1)
            min1 = sub_all[np.arange(sub_all.shape[0]), order[:, 0]]
            argmin_col = np.asarray(available)[order[:, 0]]
            min2 = (sub_all[np.arange(sub_all.shape[0]), order[:, 1]]
                    if sub_all.shape[1] > 1 else np.full(sub_all.shape[0], math.inf))
            min1_sum = float(min1.sum())
        best_col = -1
        best_total = math.inf
        for pos, c in enumerate(available):
            if sub_all.shape[0]:
                bound = min1_sum + float((min2 - min1)[argmin_col == c].sum())
                if prefix + cost[i, c] + bound > best_total:
                    continue
                rest_cols = available[:pos] + available[pos + 1:]
                tail = _min_total(cost[np.ix_(rest_rows, rest_cols)])
            else:
                tail = 0.0
            total = prefix + cost[i, c] + tail
            if total < best_total:
                best_total = total
                best_col = c
        chosen.append(best_col)
        available.remove(best_col)
        prefix += cost[i, best_col]

    total = 0.0
    for i, c in enumerate(chosen):
        total += cost[i, c]
    return Assignment(tuple(chosen), total)


def brute_force_assignment(cost: np.ndarray) -> Assignment:
    """Exhaustive minimum over all injections; test oracle only."""
    cost = np.asarray(cost, dtype=np.float64)
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise CapacityError(f"cost matrix has {n_rows} rows but only {n_cols} columns")
    if n_cols > BRUTE_FORCE_MAX_COLS:
        raise CapacityError(
            f"brute force capped at {BRUTE_FORCE_MAX_COLS} columns, got {n_cols}")
    best: tuple[int, ...] | None = None
    best_total = math.inf
    for perm in itertools.permutations(range(n_cols), n_rows):
        total = 0.0
        for i, c in enumerate(perm):
            total += cost[i, c]
        if total < best_total:  # strict: keeps the lexicographically-first optimum
            best_total = total
            best = perm
    return Assignment(best, best_total)
