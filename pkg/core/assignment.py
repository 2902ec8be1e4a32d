"""Gated minimum-cost bipartite matching between detections and tracks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from core.geometry import iou_matrix
from core.models import AssignmentSet, BBox, Detection

# Marks a gated-out (detection, track) pair.
FORBIDDEN = math.inf


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Costs of pairing row ids (detections) with column ids (tracks)."""
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    cost: np.ndarray

    def __post_init__(self) -> None:
        if self.cost.shape != (len(self.rows), len(self.cols)):
            raise ValueError(
                f"cost shape {self.cost.shape} does not match {len(self.rows)}x{len(self.cols)} ids"
            )

    def value(self, det_id: int, track_id: int) -> float:
        return float(self.cost[self.rows.index(det_id), self.cols.index(track_id)])

    def total(self, assignment: AssignmentSet) -> float:
        return sum(self.value(d, t) for d, t in assignment)


def build_cost(
    dets: Sequence[Detection],
    predicted: Sequence[BBox],
    gate: float,
    track_ids: Optional[Sequence[int]] = None,
) -> CostMatrix:
    """Cost 1 - LocSim per pair; pairs with LocSim below ``gate`` are FORBIDDEN."""
    sim = iou_matrix([d.box for d in dets], list(predicted))
    cost = np.where(sim >= gate, 1.0 - sim, FORBIDDEN)
    cols = tuple(range(len(predicted))) if track_ids is None else tuple(track_ids)
    return CostMatrix(tuple(d.det_id for d in dets), cols, cost)


def solve(c: CostMatrix) -> AssignmentSet:
    """Largest FORBIDDEN-free matching, and among those the cheapest.

    FORBIDDEN cells are replaced by a finite sentinel larger than any
    difference in real cost a matching can accumulate, so the solver never
    trades a feasible pair for a cheaper total; sentinel pairs are dropped
    from the result.
    """
    n_rows, n_cols = c.cost.shape
    if n_rows == 0 or n_cols == 0:
        return AssignmentSet()
    feasible = np.isfinite(c.cost)
    if not feasible.any():
        return AssignmentSet()

    finite = c.cost[feasible]
    hi, lo = float(finite.max()), float(finite.min())
    sentinel = abs(hi) + abs(lo) + 1.0 + min(n_rows, n_cols) * (hi - lo + 1.0)
    padded = np.where(feasible, c.cost, sentinel)

    row_idx, col_idx = linear_sum_assignment(padded)
    return AssignmentSet(
        (c.rows[i], c.cols[j]) for i, j in zip(row_idx, col_idx) if feasible[i, j]
    )


def solve_pinned(c: CostMatrix, pinned: AssignmentSet) -> AssignmentSet:
    """Keep ``pinned`` as is and solve the remaining rows and columns optimally."""
    if not pinned:
        return solve(c)
    row_set, col_set = set(c.rows), set(c.cols)
    for det_id, track_id in pinned:
        if det_id not in row_set or track_id not in col_set:
            raise ValueError(f"pinned pair ({det_id}, {track_id}) is not in the cost matrix")

    keep_rows = [i for i, r in enumerate(c.rows) if r not in pinned.track_of]
    keep_cols = [j for j, t in enumerate(c.cols) if t not in pinned.det_of]
    reduced = CostMatrix(
        tuple(c.rows[i] for i in keep_rows),
        tuple(c.cols[j] for j in keep_cols),
        c.cost[np.ix_(keep_rows, keep_cols)],
    )
    return solve(reduced).union(pinned.pairs)
