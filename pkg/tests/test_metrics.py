import itertools

import numpy as np
import pytest

from core.geometry import iou
from core.metrics import (
    MetricsError,
    accumulate,
    aggregate,
    clear_counts,
    distances,
    evaluate,
    frame_matches,
    idf1,
    idf1_counts,
    match_frame,
    mota,
    mota_score,
    render_table,
    report_frame,
    write_csv,
)
from core.models import Annotation, BBox

A = BBox(0, 0, 10, 10)
B = BBox(100, 0, 10, 10)
FAR = BBox(500, 500, 10, 10)


def seq(*rows):
    """(frame, id, box) rows -> frame map."""
    out = {}
    for frame, track_id, box in rows:
        out.setdefault(frame, []).append(Annotation(frame, track_id, box))
    return out


def single_target(frames):
    return seq(*[(f, 1, A) for f in frames])


# ── Per-frame matching ─────────────────────────────────

def test_match_frame_crossed_ids():
    gt = [Annotation(1, 1, A), Annotation(1, 2, B)]
    preds = [Annotation(1, 5, B), Annotation(1, 6, A)]
    m = match_frame(gt, preds)
    assert sorted(m.pairs) == [(1, 6), (2, 5)]
    assert (m.fp, m.fn) == (0, 0)


def test_match_frame_threshold():
    # IoU 1/3 < 0.5
    m = match_frame([Annotation(1, 1, A)], [Annotation(1, 2, BBox(5, 0, 10, 10))])
    assert m.pairs == []
    assert (m.fp, m.fn) == (1, 1)


def test_match_frame_prefers_more_matches():
    # gt 1 overlaps both predictions, gt 2 only the first one.
    gt = [Annotation(1, 1, BBox(0, 0, 10, 10)), Annotation(1, 2, BBox(3, 0, 10, 10))]
    preds = [Annotation(1, 7, BBox(1, 0, 10, 10)), Annotation(1, 8, BBox(-2, 0, 10, 10))]
    assert sorted(match_frame(gt, preds).pairs) == [(1, 8), (2, 7)]


def test_distances_gate_below_threshold():
    d = distances([Annotation(1, 1, A)], [Annotation(1, 2, A), Annotation(1, 3, BBox(5, 0, 10, 10))])
    assert d[0, 0] == pytest.approx(0.0)
    assert np.isnan(d[0, 1])


def test_previous_correspondence_is_kept():
    near = BBox(2, 0, 10, 10)  # IoU 8/12 with A
    gt = seq((1, 1, A), (2, 1, A))
    preds = seq((1, 5, A), (1, 6, near), (2, 5, near), (2, 6, A))
    counts = clear_counts(gt, preds)
    assert counts.idsw == 0
    assert counts.fp == 2
    matches = frame_matches(accumulate(gt, preds))
    assert matches[1].pairs == [(1, 5)]
    assert matches[2].pairs == [(1, 5)]
    # On its own, frame 2 takes the exact overlap.
    assert match_frame(gt[2], preds[2]).pairs == [(1, 6)]


def test_frame_matches_cover_every_frame():
    gt = single_target(range(1, 4))
    preds = seq((1, 3, A), (3, 3, FAR))
    matches = frame_matches(accumulate(gt, preds))
    assert sorted(matches) == [1, 2, 3]
    assert (matches[2].pairs, matches[2].fn) == ([], 1)
    assert (matches[3].fp, matches[3].fn) == (1, 1)


# ── CLEAR ──────────────────────────────────────────────

def test_mota_with_one_miss_and_one_false_positive():
    gt = single_target(range(1, 6))
    preds = seq(*[(f, 1, A) for f in range(1, 5)], (5, 1, FAR))
    counts = clear_counts(gt, preds)
    assert (counts.fp, counts.fn, counts.idsw, counts.gt_count) == (1, 1, 0, 5)
    assert mota(gt, preds) == pytest.approx(0.6)
    assert idf1(gt, preds) == pytest.approx(0.8)


def test_identity_switch_counted_once():
    gt = single_target(range(1, 5))
    preds = seq((1, 10, A), (2, 10, A), (3, 20, A), (4, 20, A))
    counts = clear_counts(gt, preds)
    assert counts.idsw == 1
    assert counts.mota == pytest.approx(0.75)


def test_switch_after_gap_still_counts():
    gt = single_target(range(1, 5))
    preds = seq((1, 10, A), (4, 20, A))
    counts = clear_counts(gt, preds)
    assert (counts.idsw, counts.fn) == (1, 2)


def test_perfect_tracking():
    gt = seq(*[(f, k, box) for f in range(1, 4) for k, box in ((1, A), (2, B))])
    assert mota(gt, gt) == pytest.approx(1.0)
    assert idf1(gt, gt) == pytest.approx(1.0)


def test_mota_undefined_without_ground_truth():
    with pytest.raises(MetricsError):
        mota_score(0, 0, 0, 0)
    with pytest.raises(MetricsError, match="empty"):
        mota({}, single_target([1]))
    assert mota_score(3, 2, 1, 4) == pytest.approx(-0.5)


# ── IDF1 ───────────────────────────────────────────────

def test_idf1_split_track():
    gt = single_target(range(1, 6))
    preds = seq((1, 7, A), (2, 7, A), (3, 7, A), (4, 8, A), (5, 8, A))
    assert idf1_counts(gt, preds) == (3, 5, 5)
    assert idf1(gt, preds) == pytest.approx(0.6)


def test_idf1_without_predictions():
    assert idf1_counts(single_target([1, 2]), {}) == (0, 2, 0)
    assert idf1(single_target([1, 2]), {}) == 0.0


def _overlap_counts(gt, preds) -> np.ndarray:
    gt_ids = sorted({a.track_id for frame in gt.values() for a in frame})
    pred_ids = sorted({p.track_id for frame in preds.values() for p in frame})
    counts = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    for frame in set(gt) & set(preds):
        for a in gt[frame]:
            for p in preds[frame]:
                if iou(a.box, p.box) >= 0.5:
                    counts[gt_ids.index(a.track_id), pred_ids.index(p.track_id)] += 1
    return counts


def _brute_force_idtp(counts: np.ndarray) -> int:
    n_gt, n_pred = counts.shape
    best = 0
    if n_gt <= n_pred:
        for cols in itertools.permutations(range(n_pred), n_gt):
            best = max(best, sum(counts[i, j] for i, j in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n_gt), n_pred):
            best = max(best, sum(counts[i, j] for j, i in enumerate(rows)))
    return int(best)


def test_idf1_matches_brute_force():
    rng = np.random.default_rng(8)
    spots = [BBox(100 * k, 0, 10, 10) for k in range(4)]
    for _ in range(100):
        n_gt, n_pred = (int(n) for n in rng.integers(1, 6, size=2))
        gt, preds = {}, {}
        for f in range(1, 9):
            for side, n in ((gt, n_gt), (preds, n_pred)):
                size = min(n, 4)
                ids = rng.choice(n, size=size, replace=False) + 1
                for k, track_id in zip(rng.choice(4, size=size, replace=False), ids):
                    side.setdefault(f, []).append(Annotation(f, int(track_id), spots[k]))
        idtp, _, _ = idf1_counts(gt, preds)
        assert idtp == _brute_force_idtp(_overlap_counts(gt, preds))


# ── Reports ────────────────────────────────────────────

def test_evaluate_rejects_empty_ground_truth():
    with pytest.raises(MetricsError, match="empty"):
        evaluate({}, single_target([1]))
    with pytest.raises(MetricsError, match="empty"):
        evaluate({1: []}, {})


def test_evaluate_rejects_predictions_past_ground_truth():
    with pytest.raises(MetricsError, match="frame 4"):
        evaluate(single_target([1, 2]), single_target([1, 4]), name="seq")


def test_evaluate_and_aggregate():
    gt = single_target(range(1, 6))
    first = evaluate(gt, seq(*[(f, 1, A) for f in range(1, 5)], (5, 1, FAR)), name="a")
    second = evaluate(gt, gt, name="b")
    assert (first.fp, first.fn, first.gt_count, first.pred_count, first.idtp) == (1, 1, 5, 5, 4)
    assert first.mota == pytest.approx(0.6)

    total = aggregate([first, second])
    assert total.name == "OVERALL"
    assert total.gt_count == 10
    assert total.mota == pytest.approx(0.8)
    assert total.idf1 == pytest.approx(2 * 9 / 20)
    assert [r.name for r in total.per_sequence] == ["a", "b"]


def test_report_table_and_csv(tmp_path):
    gt = single_target(range(1, 6))
    report = evaluate(gt, seq(*[(f, 1, A) for f in range(1, 5)], (5, 1, FAR)), name="seq")
    df = report_frame([report])
    assert list(df.columns) == ["name", "MOTA", "IDF1", "IDSW", "FP", "FN", "GT", "Pred"]
    assert "0.6000" in render_table(df)

    path = tmp_path / "report.csv"
    write_csv(df, path)
    assert path.read_text().splitlines() == [
        "name,MOTA,IDF1,IDSW,FP,FN,GT,Pred",
        "seq,0.600000,0.800000,0,1,1,5,5",
    ]
