"""Hungarian one-to-one assignment between decoded queries and ground truths."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from .geometry import center_distance, ciou, pairwise

PROB_EPS = 1e-6


@dataclass(frozen=True)
class CostWeights:
    cls: float = 3.0
    l1: float = 5.0
    iou: float = 4.0
    ctr: float = 4.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cls, self.l1, self.iou, self.ctr)


@dataclass
class CostMatrix:
    """Costs for valid queries (rows) against ground truths (columns).

    ``query_index[r]`` maps row ``r`` back to the query slot it came from.
    ``components`` keeps the unweighted terms for diagnostics.
    """

    values: np.ndarray
    query_index: np.ndarray
    components: dict[str, np.ndarray] = field(default_factory=dict)
    weights: CostWeights = field(default_factory=CostWeights)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class MatchAssignment:
    pairs: list[tuple[int, int]]
    unmatched_queries: list[int]

    @property
    def query_indices(self) -> list[int]:
        return [q for q, _ in self.pairs]

    @property
    def gt_indices(self) -> list[int]:
        return [g for _, g in self.pairs]


@torch.no_grad()
def build_cost(
    logits: Tensor,
    boxes: Tensor,
    gts: Tensor,
    valid: Tensor | None = None,
    weights: CostWeights = CostWeights(),
) -> CostMatrix:
    """Composite matching cost.

    ``cost[i, j] = w_cls * -log(p_i) + w_l1 * |b_i - g_j|_1
    + w_iou * (1 - CIoU(b_i, g_j)) + w_ctr * |c(b_i) - c(g_j)|_2``

    with ``p_i = sigmoid(logit_i)`` clamped to ``[1e-6, 1 - 1e-6]``.

    Args:
        logits: ``(K,)`` query logits.
        boxes: ``(K, 4)`` decoded normalized boxes.
        gts: ``(M, 4)`` normalized ground-truth boxes.
        valid: optional ``(K,)`` mask; invalid (padded) slots get no row.
    """
    logits = torch.as_tensor(logits).double().reshape(-1)
    boxes = torch.as_tensor(boxes).double().reshape(-1, 4)
    gts = torch.as_tensor(gts).double().reshape(-1, 4)
    if valid is None:
        qidx = torch.arange(logits.numel())
    else:
        qidx = torch.nonzero(torch.as_tensor(valid).reshape(-1), as_tuple=False).reshape(-1)
    logits, boxes = logits[qidx], boxes[qidx]
    k, m = logits.numel(), gts.shape[0]

    p = torch.sigmoid(logits).clamp(PROB_EPS, 1 - PROB_EPS)
    bce = (-torch.log(p))[:, None].expand(k, m)
    l1 = torch.cdist(boxes, gts, p=1) if k and m else torch.zeros(k, m, dtype=torch.float64)
    giou_term = 1 - pairwise(ciou, boxes, gts) if k and m else torch.zeros(k, m, dtype=torch.float64)
    ctr = pairwise(center_distance, boxes, gts) if k and m else torch.zeros(k, m, dtype=torch.float64)
    values = weights.cls * bce + weights.l1 * l1 + weights.iou * giou_term + weights.ctr * ctr
    return CostMatrix(
        values=values.numpy().copy(),
        query_index=qidx.numpy().copy(),
        components={
            "cls": bce.numpy().copy(),
            "l1": l1.numpy().copy(),
            "iou": giou_term.numpy().copy(),
            "ctr": ctr.numpy().copy(),
        },
        weights=weights,
    )


def _lsap_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return math.fsum(cost[r, c])


def _solve(cost: np.ndarray, tie_tol: float) -> list[tuple[int, int]]:
    """Optimal assignment; among optimal ones the lexicographically smallest
    sorted pair list.

    The optimum comes from scipy.  Pairs are then fixed greedily row by row:
    row ``i`` takes the smallest column that still admits an optimal
    completion of the remaining rows, or stays unmatched when none does.
    """
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    r, c = linear_sum_assignment(cost)
    best = math.fsum(cost[r, c])
    tol = tie_tol * max(1.0, abs(best))

    need = min(n_rows, n_cols)
    pairs: list[tuple[int, int]] = []
    used = np.zeros(n_cols, dtype=bool)
    acc = 0.0
    for i in range(n_rows):
        if len(pairs) == need:
            break
        rest_rows = np.arange(i + 1, n_rows)
        chosen = None
        for j in range(n_cols):
            if used[j]:
                continue
            free = np.flatnonzero(~used)
            free = free[free != j]
            remaining = need - len(pairs) - 1
            if remaining > min(len(rest_rows), len(free)):
                continue
            sub = _lsap_cost(cost[np.ix_(rest_rows, free)]) if remaining else 0.0
            if acc + cost[i, j] + sub <= best + tol:
                chosen = j
                break
        if chosen is not None:
            pairs.append((i, chosen))
            used[chosen] = True
            acc += cost[i, chosen]
    return pairs


def hungarian_assign(cost: CostMatrix | np.ndarray, tie_tol: float = 1e-12) -> MatchAssignment:
    """Minimum-cost one-to-one assignment (rectangular matrices allowed).

    Returns ``min(rows, cols)`` pairs ``(query_index, gt_index)``; the rest of
    the queries are listed as unmatched.  Ties between optimal solutions are
    broken towards the lexicographically smallest ``(query, gt)`` pair list.
    """
    if isinstance(cost, CostMatrix):
        values, qidx = cost.values, cost.query_index
    else:
        values = np.asarray(cost, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        qidx = np.arange(values.shape[0])
    if not np.all(np.isfinite(values)):
        raise ValueError("cost matrix contains non-finite entries")
    local = _solve(values, tie_tol)
    pairs = [(int(qidx[i]), int(j)) for i, j in local]
    matched = {q for q, _ in pairs}
    unmatched = [int(q) for q in qidx if int(q) not in matched]
    return MatchAssignment(pairs=pairs, unmatched_queries=unmatched)
