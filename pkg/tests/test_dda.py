import itertools

import numpy as np
import pytest

from core.assignment import build_cost, solve
from core.dda import (
    DDAContext,
    TrackView,
    adm,
    coefficient_of_variation,
    ddm,
    ddm_replacements,
    pair_confusion,
    run_dda,
    tdm,
    tdm_blur_set,
)
from core.models import AssignmentSet, BBox, Detection


def at_iou(s: float) -> float:
    """Center offset giving IoU ``s`` between two 10x10 boxes on the same row."""
    return 10 * (1 - s) / (1 + s)


def box(cx: float) -> BBox:
    return BBox(cx, 0, 10, 10)


def view(track_id, cx, feature=None):
    return TrackView(track_id, box(cx), feature)


def _rand_unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_context(rng, kappa=0.3):
    lines = itertools.count(1)
    tracks = [
        TrackView(
            k + 1,
            BBox(*rng.uniform(0, 60, 2), 20, 40),
            _rand_unit(rng, 4) if rng.random() < 0.9 else None,
        )
        for k in range(int(rng.integers(1, 6)))
    ]

    def det(conf):
        anchor = tracks[int(rng.integers(len(tracks)))].predicted
        return Detection(
            frame=1,
            box=BBox(anchor.cx + rng.normal(0, 6), anchor.cy + rng.normal(0, 6), 20, 40),
            conf=conf,
            embedding=_rand_unit(rng, 4) if rng.random() < 0.9 else None,
            source_line=next(lines),
        )

    first = [det(0.9) for _ in range(int(rng.integers(0, 6)))]
    second = [det(0.3) for _ in range(int(rng.integers(0, 4)))]
    p = solve(build_cost(first, [t.predicted for t in tracks], 0.2, [t.id for t in tracks]))
    return DDAContext(p, first, second, tracks, kappa, 0.2)


# ── Context ────────────────────────────────────────────

def test_context_rejects_foreign_assignment(make_det):
    d = make_det(0, 0, 10, 10, line=1)
    u = make_det(0, 0, 10, 10, conf=0.3, line=2)
    with pytest.raises(ValueError, match="reliable"):
        DDAContext(AssignmentSet([(2, 1)]), [d], [u], [view(1, 0)])
    with pytest.raises(ValueError, match="track"):
        DDAContext(AssignmentSet([(1, 9)]), [d], [u], [view(1, 0)])
    with pytest.raises(ValueError, match="kappa"):
        DDAContext(AssignmentSet(), [d], [u], [view(1, 0)], kappa=1.5)


# ── DDM ────────────────────────────────────────────────

def test_ddm_without_unreliable_detections_is_identity(make_det):
    d = make_det(0, 0, 10, 10, line=1)
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d], [], [view(1, 0)])
    assert ddm(ctx) == (ctx.assignment, [])


def test_ddm_replaces_and_frees_reliable_detection(make_det):
    d1 = make_det(at_iou(0.5), 0, 10, 10, line=1)
    u = make_det(-at_iou(0.9), 0, 10, 10, conf=0.3, line=2)
    t1, t2 = view(1, 0), view(2, at_iou(0.5))
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d1], [u], [t1, t2], kappa=0.3, gate=0.2)

    assert set(ddm_replacements(ctx)) == {(2, 1)}
    result, promoted = ddm(ctx)
    assert promoted == [u]
    # d1 is freed and picked up by the track sitting on it.
    assert set(result) == {(2, 1), (1, 2)}


def test_ddm_margin_must_exceed_kappa(make_det):
    d1 = make_det(at_iou(0.5), 0, 10, 10, line=1)
    u = make_det(-at_iou(0.75), 0, 10, 10, conf=0.3, line=2)
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d1], [u], [view(1, 0)], kappa=0.3)
    assert len(ddm_replacements(ctx)) == 0
    assert ddm(ctx) == (ctx.assignment, [])


def test_ddm_conflict_keeps_higher_locsim(make_det):
    t1, t2 = view(1, at_iou(0.9)), view(2, -at_iou(0.85))
    u = make_det(0, 0, 10, 10, conf=0.3, line=3)
    d1 = make_det(t1.predicted.cx + at_iou(0.4), 0, 10, 10, line=1)
    d2 = make_det(t2.predicted.cx - at_iou(0.4), 0, 10, 10, line=2)
    ctx = DDAContext(AssignmentSet([(1, 1), (2, 2)]), [d1, d2], [u], [t1, t2], kappa=0.3, gate=0.2)

    assert set(ddm_replacements(ctx)) == {(3, 1)}
    result, promoted = ddm(ctx)
    assert promoted == [u]
    assert set(result) == {(3, 1), (2, 2)}


def test_ddm_properties_on_random_contexts():
    rng = np.random.default_rng(21)
    for _ in range(500):
        ctx = random_context(rng)
        pinned = ddm_replacements(ctx)
        for det_id, track_id in pinned:
            old = ctx.assignment.det_of[track_id]
            assert ctx.loc_sim(det_id, track_id) - ctx.loc_sim(old, track_id) > ctx.kappa
        result, promoted = ddm(ctx)
        assert pinned.pairs <= result.pairs
        assert {d.det_id for d in promoted} == pinned.det_ids()
        allowed = {d.det_id for d in ctx.first} | pinned.det_ids()
        assert result.det_ids() <= allowed


# ── TDM ────────────────────────────────────────────────

def test_tdm_without_lost_tracks_is_identity(make_det, unit):
    d = make_det(0, 0, 10, 10, line=1, emb=unit(1, 0))
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d], [], [view(1, 0, unit(0, 1))])
    assert tdm(ctx, ctx.assignment) == ctx.assignment


def test_tdm_moves_detection_to_closer_lost_track(make_det, unit):
    d = make_det(0, 0, 10, 10, line=1, emb=unit(1, 0))
    t1 = view(1, at_iou(0.5), unit(0.6, 0.8))        # cos_dist 0.40
    t2 = view(2, -at_iou(0.4), unit(0.95, np.sqrt(1 - 0.95 ** 2)))  # cos_dist 0.05
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d], [], [t1, t2], kappa=0.3)

    assert [t.id for t in tdm_blur_set(ctx, 1, 1, [t2])] == [1, 2]
    assert set(tdm(ctx, ctx.assignment)) == {(1, 2)}


def test_tdm_ignores_lost_track_outside_kappa(make_det, unit):
    d = make_det(0, 0, 10, 10, line=1, emb=unit(1, 0))
    t1 = view(1, 0, unit(0, 1))
    t2 = view(2, -at_iou(0.5), unit(1, 0))
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d], [], [t1, t2], kappa=0.3)
    assert tdm(ctx, ctx.assignment) == ctx.assignment


def test_tdm_conflict_smaller_distance_wins(make_det, unit):
    a = make_det(-1, 0, 10, 10, line=1, emb=unit(0.9, np.sqrt(0.19), 0))
    b = make_det(1, 0, 10, 10, line=2, emb=unit(0.8, 0, 0.6))
    t1 = view(1, -1, unit(0, 0, 1))
    t2 = view(2, 1, unit(0, 1, 0))
    t3 = view(3, 0, unit(1, 0, 0))
    ctx = DDAContext(AssignmentSet([(1, 1), (2, 2)]), [a, b], [], [t1, t2, t3], kappa=0.3)

    assert ctx.appearance(1, 3) == pytest.approx(0.1)
    assert ctx.appearance(2, 3) == pytest.approx(0.2)
    assert set(tdm(ctx, ctx.assignment)) == {(1, 3), (2, 2)}


def test_tdm_skips_pairs_without_appearance(make_det, unit):
    d = make_det(0, 0, 10, 10, line=1)
    t1 = view(1, at_iou(0.5), unit(0.6, 0.8))
    t2 = view(2, -at_iou(0.4), unit(1, 0))
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d], [], [t1, t2], kappa=0.3)
    assert tdm(ctx, ctx.assignment) == ctx.assignment


def test_tdm_choices_are_blur_set_argmin():
    rng = np.random.default_rng(33)
    for _ in range(500):
        ctx = random_context(rng)
        p_in = ctx.assignment
        result = tdm(ctx, p_in)
        lost = ctx.unmatched_tracks(p_in)
        for det_id, track_id in p_in:
            if ctx.appearance(det_id, track_id) is None:
                assert (det_id, track_id) in result
                continue
            blur = tdm_blur_set(ctx, det_id, track_id, lost)
            dists = [ctx.appearance(det_id, t.id) for t in blur]
            best = blur[int(np.argmin(dists))].id
            if (det_id, best) in result:
                continue
            # Lost the claim: someone at least as close holds it, and we kept our own track.
            holder = result.det_of[best]
            assert ctx.appearance(holder, best) <= min(dists)
            assert (det_id, track_id) in result


# ── ADM ────────────────────────────────────────────────

@pytest.mark.parametrize("values, expected", [
    ([0.5, 0.5, 0.5, 0.5], 0.0),
    ([0.8, 0.8, 0.1, 0.1], 0.35 / 0.45),
])
def test_coefficient_of_variation(values, expected):
    assert coefficient_of_variation(values) == pytest.approx(expected)


def test_coefficient_of_variation_zero_mean():
    assert coefficient_of_variation([0, 0, 0, 0]) is None


def test_pair_confusion_matches_direct_formula():
    rng = np.random.default_rng(44)
    for _ in range(200):
        ctx = random_context(rng)
        pairs = list(ctx.assignment)
        for a, b in itertools.combinations(pairs, 2):
            sims = np.array([
                ctx.loc_sim(a[0], a[1]), ctx.loc_sim(a[0], b[1]),
                ctx.loc_sim(b[0], a[1]), ctx.loc_sim(b[0], b[1]),
            ])
            cv = pair_confusion(ctx, a, b)
            mean = sims.sum() / 4
            if mean == 0:
                assert cv is None
            else:
                std = np.sqrt(((sims - mean) ** 2).sum() / 4)
                assert cv == pytest.approx(std / mean, abs=1e-12)


def _swap_fixture(make_det, d1_x=0.4, d2_x=0.6):
    # cos_dist: d1-t1 0.4, d2-t2 0.5, d1-t2 0.1, d2-t1 0.2
    c, s = 0.5, np.sqrt(0.75)
    f1 = np.array([1.0, 0.0, 0.0])
    f2 = np.array([c, s, 0.0])
    y1 = (0.9 - 0.6 * c) / s
    y2 = (0.5 - 0.8 * c) / s
    e1 = np.array([0.6, y1, np.sqrt(1 - 0.36 - y1 ** 2)])
    e2 = np.array([0.8, y2, np.sqrt(1 - 0.64 - y2 ** 2)])
    d1 = make_det(d1_x, 0, 10, 10, line=1, emb=e1)
    d2 = make_det(d2_x, 0, 10, 10, line=2, emb=e2)
    return d1, d2, f1, f2


def test_adm_swaps_confused_pair(make_det):
    d1, d2, f1, f2 = _swap_fixture(make_det)
    ctx = DDAContext(AssignmentSet([(1, 1), (2, 2)]), [d1, d2], [], [view(1, 0, f1), view(2, 1, f2)])
    assert ctx.appearance(1, 1) + ctx.appearance(2, 2) == pytest.approx(0.9)
    assert ctx.appearance(1, 2) + ctx.appearance(2, 1) == pytest.approx(0.3)
    assert pair_confusion(ctx, (1, 1), (2, 2)) < 0.3
    assert set(adm(ctx, ctx.assignment)) == {(1, 2), (2, 1)}


def test_adm_leaves_unconfused_pair(make_det):
    d1, d2, f1, f2 = _swap_fixture(make_det, d1_x=0.0, d2_x=9.0)
    ctx = DDAContext(AssignmentSet([(1, 1), (2, 2)]), [d1, d2], [], [view(1, 0, f1), view(2, 9, f2)])
    assert pair_confusion(ctx, (1, 1), (2, 2)) > 0.3
    assert adm(ctx, ctx.assignment) == ctx.assignment


def test_adm_skips_zero_mean_blocks(make_det):
    d1, d2, f1, f2 = _swap_fixture(make_det, d1_x=100.0, d2_x=200.0)
    ctx = DDAContext(AssignmentSet([(1, 1), (2, 2)]), [d1, d2], [], [view(1, 0, f1), view(2, 300, f2)])
    assert pair_confusion(ctx, (1, 1), (2, 2)) is None
    assert adm(ctx, ctx.assignment) == ctx.assignment


def test_adm_swaps_strictly_reduce_appearance_cost():
    rng = np.random.default_rng(55)
    for kappa in (0.3, 1.0):
        for _ in range(500):
            ctx = random_context(rng, kappa=kappa)
            p_in = ctx.assignment
            result = adm(ctx, p_in)
            assert result.det_ids() == p_in.det_ids()
            assert result.track_ids() == p_in.track_ids()
            if result == p_in:
                continue
            changed = [d for d in p_in.det_ids() if p_in.track_of[d] != result.track_of[d]]
            before = sum(ctx.appearance(d, p_in.track_of[d]) for d in changed)
            after = sum(ctx.appearance(d, result.track_of[d]) for d in changed)
            assert after < before


# ── Combination ────────────────────────────────────────

def test_run_dda_empty_is_identity():
    ctx = DDAContext(AssignmentSet(), [], [], [view(1, 0)])
    assert run_dda(ctx) == (AssignmentSet(), [], [])


def test_run_dda_ddm_then_tdm(make_det, unit):
    d1 = make_det(-at_iou(0.5), 0, 10, 10, line=1, emb=unit(0, 0.3, 1))
    u = make_det(at_iou(0.9), 0, 10, 10, conf=0.3, line=2, emb=unit(1, 0, 0))
    t1 = view(1, 0, unit(1, 0, 0))
    t2 = view(2, d1.box.cx - at_iou(0.4), unit(0, 1, 0))
    t3 = view(3, d1.box.cx - at_iou(0.35), unit(0, 0, 1))
    tracks = [t1, t2, t3]
    p = solve(build_cost([d1], [t.predicted for t in tracks], 0.2, [1, 2, 3]))
    assert set(p) == {(1, 1)}

    ctx = DDAContext(p, [d1], [u], tracks, kappa=0.3, gate=0.2)
    after_ddm, promoted = ddm(ctx)
    assert set(after_ddm) == {(2, 1), (1, 2)}
    assert promoted == [u]

    final, first, second = run_dda(ctx)
    assert set(final) == {(2, 1), (1, 3)}
    assert first == [d1, u]
    assert second == []


def test_run_dda_toggles(make_det, unit):
    d1 = make_det(-at_iou(0.5), 0, 10, 10, line=1, emb=unit(0, 0.3, 1))
    u = make_det(at_iou(0.9), 0, 10, 10, conf=0.3, line=2, emb=unit(1, 0, 0))
    tracks = [view(1, 0, unit(1, 0, 0)), view(2, d1.box.cx - at_iou(0.4), unit(0, 1, 0))]
    ctx = DDAContext(AssignmentSet([(1, 1)]), [d1], [u], tracks, kappa=0.3, gate=0.2)

    final, first, second = run_dda(ctx, use_ddm=False, use_tdm=False, use_adm=False)
    assert final == ctx.assignment
    assert (first, second) == ([d1], [u])
