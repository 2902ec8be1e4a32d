"""Decomposed data association: refine a global assignment in three passes.

- DDM swaps a matched reliable detection for an unreliable one that sits
  clearly better on the track's predicted box (motion only).
- TDM lets a matched detection move to an unmatched trajectory that is about
  as close positionally but closer in appearance.
- ADM swaps two assignments whose 2x2 positional block is too uniform to
  trust, when appearance says the crossed pairing is better.

All three read the same confusion reduction factor κ. Passes that need
appearance skip any pair lacking a detection embedding or a track feature.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from core.assignment import FORBIDDEN, CostMatrix, build_cost, solve, solve_pinned
from core.geometry import cos_dist, iou
from core.models import AssignmentSet, BBox, Detection

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrackView:
    """What association needs to know about a track in the current frame."""
    id: int
    predicted: BBox
    feature: Optional[np.ndarray] = None


@dataclass(eq=False)
class DDAContext:
    assignment: AssignmentSet
    first: list[Detection]
    second: list[Detection]
    tracks: list[TrackView]
    kappa: float = 0.3
    gate: float = 0.0
    _dets: dict[int, Detection] = field(init=False, repr=False)
    _tracks: dict[int, TrackView] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must be in [0, 1], got {self.kappa}")
        self._dets = {d.det_id: d for d in (*self.first, *self.second)}
        self._tracks = {t.id: t for t in self.tracks}
        first_ids = {d.det_id for d in self.first}
        for det_id, track_id in self.assignment:
            if det_id not in first_ids:
                raise ValueError(f"assigned detection {det_id} is not a reliable detection")
            if track_id not in self._tracks:
                raise ValueError(f"assigned track {track_id} is not in the context")

    def det(self, det_id: int) -> Detection:
        return self._dets[det_id]

    def track(self, track_id: int) -> TrackView:
        return self._tracks[track_id]

    def loc_sim(self, det_id: int, track_id: int) -> float:
        return iou(self._dets[det_id].box, self._tracks[track_id].predicted)

    def appearance(self, det_id: int, track_id: int) -> Optional[float]:
        emb = self._dets[det_id].embedding
        feat = self._tracks[track_id].feature
        if emb is None or feat is None:
            return None
        return cos_dist(emb, feat)

    def unmatched_tracks(self, assignment: AssignmentSet) -> list[TrackView]:
        return [t for t in self.tracks if t.id not in assignment.det_of]


# ── DDM ────────────────────────────────────────────────

def ddm_replacements(ctx: DDAContext) -> AssignmentSet:
    """Replacement pairs (unreliable detection, track) before reassignment.

    A matched track proposes the unreliable detection with the best LocSim
    among those beating its current detection by more than κ; when two
    tracks propose the same detection the higher LocSim keeps it.
    """
    claims: dict[int, tuple[float, int]] = {}
    for det_id, track_id in ctx.assignment:
        base = ctx.loc_sim(det_id, track_id)
        best: Optional[tuple[float, int]] = None
        for cand in ctx.second:
            sim = ctx.loc_sim(cand.det_id, track_id)
            if sim - base > ctx.kappa and (best is None or sim > best[0]):
                best = (sim, cand.det_id)
        if best is None:
            continue
        held = claims.get(best[1])
        if held is None or best[0] > held[0]:
            claims[best[1]] = (best[0], track_id)
    return AssignmentSet((d, t) for d, (_, t) in claims.items())


def ddm(ctx: DDAContext) -> tuple[AssignmentSet, list[Detection]]:
    """Detection disambiguation. Returns the reassigned pairs and the promoted unreliable detections."""
    if not ctx.second or not ctx.assignment:
        return ctx.assignment, []
    pinned = ddm_replacements(ctx)
    if not pinned:
        return ctx.assignment, []

    promoted = [d for d in ctx.second if d.det_id in pinned.track_of]
    first = [*ctx.first, *promoted]
    cost = build_cost(
        first, [t.predicted for t in ctx.tracks], ctx.gate, [t.id for t in ctx.tracks]
    )
    result = solve_pinned(cost, pinned)
    log.debug("DDM: %d replacement(s), %d -> %d pairs", len(pinned), len(ctx.assignment), len(result))
    return result, promoted


# ── TDM ────────────────────────────────────────────────

def tdm_blur_set(ctx: DDAContext, det_id: int, track_id: int, lost: Sequence[TrackView]) -> list[TrackView]:
    """The matched trajectory plus every unmatched one within κ of its LocSim."""
    base = ctx.loc_sim(det_id, track_id)
    blur = [ctx.track(track_id)]
    for t in lost:
        if t.feature is not None and base - ctx.loc_sim(det_id, t.id) < ctx.kappa:
            blur.append(t)
    return blur


def tdm(ctx: DDAContext, p_in: AssignmentSet) -> AssignmentSet:
    """Trajectory disambiguation over the pairs of ``p_in``."""
    lost = ctx.unmatched_tracks(p_in)
    if not lost:
        return p_in

    # det id -> (chosen trajectory, cosine distance), only where it changes
    choices: dict[int, tuple[int, float]] = {}
    for det_id, track_id in p_in:
        if ctx.appearance(det_id, track_id) is None:
            continue
        blur = tdm_blur_set(ctx, det_id, track_id, lost)
        dists = [ctx.appearance(det_id, t.id) for t in blur]
        k = int(np.argmin(dists))
        if blur[k].id != track_id:
            choices[det_id] = (blur[k].id, dists[k])
    if not choices:
        return p_in

    winners: dict[int, tuple[int, float]] = {}
    for det_id, (track_id, dist) in sorted(choices.items()):
        held = winners.get(track_id)
        if held is None or dist < held[1]:
            winners[track_id] = (det_id, dist)

    moved = {det_id for det_id, _ in winners.values()}
    pairs: dict[int, int] = {}
    for det_id, track_id in p_in:
        if det_id in moved:
            continue
        # Losers fall back to their original trajectory unless someone claimed it.
        if track_id in winners:
            continue
        pairs[det_id] = track_id
    for track_id, (det_id, _) in winners.items():
        pairs[det_id] = track_id

    log.debug("TDM: %d detection(s) re-targeted", len(winners))
    return AssignmentSet(pairs.items())


# ── ADM ────────────────────────────────────────────────

def coefficient_of_variation(values: Sequence[float]) -> Optional[float]:
    """Population std over mean; None when the mean is zero."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if mean == 0.0:
        return None
    return float(arr.std() / mean)


def pair_confusion(ctx: DDAContext, a: tuple[int, int], b: tuple[int, int]) -> Optional[float]:
    """Cv of the 2x2 LocSim block spanned by two assignments."""
    (di, ti), (dj, tj) = a, b
    return coefficient_of_variation([
        ctx.loc_sim(di, ti), ctx.loc_sim(di, tj),
        ctx.loc_sim(dj, ti), ctx.loc_sim(dj, tj),
    ])


def _components(n: int, edges: Sequence[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for node in sorted({x for e in edges for x in e}):
        groups.setdefault(find(node), []).append(node)
    return [groups[k] for k in sorted(groups)]


def adm(ctx: DDAContext, p_in: AssignmentSet) -> AssignmentSet:
    """Association disambiguation over the pairs of ``p_in``.

    Proposed swaps that share an assignment are settled together: each
    connected group is re-matched by appearance cost, allowing only the
    original pairs and the crossings of confused pairs, and the result is
    kept only if it lowers the group's appearance cost.
    """
    eligible = [(d, t) for d, t in p_in if ctx.appearance(d, t) is not None]
    if len(eligible) < 2:
        return p_in

    confused: set[frozenset[int]] = set()
    proposals: list[tuple[int, int]] = []
    for i, j in itertools.combinations(range(len(eligible)), 2):
        cv = pair_confusion(ctx, eligible[i], eligible[j])
        if cv is None or cv >= ctx.kappa:
            continue
        (di, ti), (dj, tj) = eligible[i], eligible[j]
        crossed = ctx.appearance(di, tj) + ctx.appearance(dj, ti)
        straight = ctx.appearance(di, ti) + ctx.appearance(dj, tj)
        confused.add(frozenset((i, j)))
        if crossed < straight:
            proposals.append((i, j))
    if not proposals:
        return p_in

    result = dict(p_in.track_of)
    swapped = 0
    for members in _components(len(eligible), proposals):
        dets = [eligible[k][0] for k in members]
        trks = [eligible[k][1] for k in members]
        n = len(members)
        cost = np.full((n, n), FORBIDDEN)
        for a in range(n):
            for b in range(n):
                if a == b or frozenset((members[a], members[b])) in confused:
                    cost[a, b] = ctx.appearance(dets[a], trks[b])
        matrix = CostMatrix(tuple(dets), tuple(trks), cost)
        rematch = solve(matrix)
        before = float(np.trace(cost))
        if len(rematch) == n and matrix.total(rematch) < before:
            for det_id, track_id in rematch:
                result[det_id] = track_id
            swapped += 1
    if swapped:
        log.debug("ADM: %d confused group(s) re-matched", swapped)
    return AssignmentSet(result.items())


# ── Combination ────────────────────────────────────────

def run_dda(
    ctx: DDAContext,
    use_ddm: bool = True,
    use_tdm: bool = True,
    use_adm: bool = True,
) -> tuple[AssignmentSet, list[Detection], list[Detection]]:
    """DDM, then TDM, then ADM. Returns the final assignment and updated partitions."""
    assignment, first, second = ctx.assignment, list(ctx.first), list(ctx.second)
    if use_ddm:
        assignment, promoted = ddm(ctx)
        if promoted:
            moved = {d.det_id for d in promoted}
            first = [*first, *promoted]
            second = [d for d in second if d.det_id not in moved]
            ctx = replace(ctx, assignment=assignment, first=first, second=second)
    if use_tdm:
        assignment = tdm(ctx, assignment)
    if use_adm:
        assignment = adm(ctx, assignment)
    return assignment, first, second
