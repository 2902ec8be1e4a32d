"""CLEAR (MOTA, FP, FN, IDSW) and IDF1 scoring of tracker output against ground truth.

Both inputs are frame -> list of Annotation maps as returned by
``storage.read_gt`` / ``storage.read_tracks``. Scoring runs through one
``motmetrics`` accumulator per sequence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import motmetrics as mm
import numpy as np
import pandas as pd

from core.geometry import iou_matrix
from core.models import Annotation, EvalReport

log = logging.getLogger(__name__)

Frames = Mapping[int, Sequence[Annotation]]

SUMMARY_METRICS = [
    "num_objects", "num_predictions", "num_false_positives", "num_misses",
    "num_switches", "mota", "idtp", "idf1",
]
MATCHED = ("MATCH", "SWITCH")


class MetricsError(ValueError):
    """Empty ground truth or predictions outside the ground-truth frame range."""


@dataclass
class FrameMatch:
    """Correspondences of one frame as (gt id, pred id) pairs."""
    pairs: list[tuple[int, int]] = field(default_factory=list)
    fp: int = 0
    fn: int = 0


def distances(gt: Sequence[Annotation], preds: Sequence[Annotation], iou_threshold: float = 0.5) -> np.ndarray:
    """1 - IoU, NaN where the IoU falls below the threshold (motmetrics' convention)."""
    dist = 1.0 - iou_matrix([a.box for a in gt], [p.box for p in preds])
    return np.where(dist > 1.0 - iou_threshold, np.nan, dist)


def accumulate(gt: Frames, preds: Frames, iou_threshold: float = 0.5) -> mm.MOTAccumulator:
    """Feed every frame of either side into a fresh accumulator.

    The accumulator keeps a target's last correspondence while its IoU stays
    at or above the threshold and solves the rest by Hungarian on 1 - IoU.
    """
    acc = mm.MOTAccumulator(auto_id=False)
    for frame in sorted(set(gt) | set(preds)):
        g, p = gt.get(frame, ()), preds.get(frame, ())
        acc.update(
            [a.track_id for a in g],
            [x.track_id for x in p],
            distances(g, p, iou_threshold),
            frameid=frame,
        )
    return acc


def frame_matches(acc: mm.MOTAccumulator) -> dict[int, FrameMatch]:
    """Per-frame correspondences read back from the accumulator's events."""
    out: dict[int, FrameMatch] = {}
    events = acc.mot_events
    for frame, group in events.groupby(level="FrameId", sort=True):
        matched = group[group["Type"].isin(MATCHED)]
        out[int(frame)] = FrameMatch(
            pairs=[(int(o), int(h)) for o, h in zip(matched["OId"], matched["HId"])],
            fp=int((group["Type"] == "FP").sum()),
            fn=int((group["Type"] == "MISS").sum()),
        )
    return out


def match_frame(
    gt: Sequence[Annotation],
    preds: Sequence[Annotation],
    iou_threshold: float = 0.5,
) -> FrameMatch:
    """CLEAR matching of a single frame, maximizing the number of matches first."""
    acc = accumulate({0: gt}, {0: preds}, iou_threshold)
    return frame_matches(acc).get(0, FrameMatch())


def summarize(gt: Frames, preds: Frames, iou_threshold: float = 0.5, name: str = "sequence") -> pd.Series:
    """One row of motmetrics' summary for the sequence."""
    acc = accumulate(gt, preds, iou_threshold)
    mh = mm.metrics.create()
    return mh.compute(acc, metrics=SUMMARY_METRICS, name=name).loc[name]


def _require_gt(gt: Frames, name: str) -> None:
    if not any(gt.values()):
        raise MetricsError(f"{name}: ground truth is empty")


@dataclass
class ClearCounts:
    gt_count: int = 0
    pred_count: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    mota: float = 0.0


def mota_score(fp: int, fn: int, idsw: int, gt_count: int) -> float:
    if gt_count == 0:
        raise MetricsError("MOTA is undefined without ground-truth boxes")
    return 1.0 - (fp + fn + idsw) / gt_count


def clear_counts(gt: Frames, preds: Frames, iou_threshold: float = 0.5) -> ClearCounts:
    """CLEAR counts of a sequence.

    An identity switch is counted when a ground-truth target is matched to a
    different prediction id than at its last matched frame, gaps included.
    """
    _require_gt(gt, "sequence")
    row = summarize(gt, preds, iou_threshold)
    return ClearCounts(
        gt_count=int(row["num_objects"]),
        pred_count=int(row["num_predictions"]),
        fp=int(row["num_false_positives"]),
        fn=int(row["num_misses"]),
        idsw=int(row["num_switches"]),
        mota=float(row["mota"]),
    )


def mota(gt: Frames, preds: Frames, iou_threshold: float = 0.5) -> float:
    return clear_counts(gt, preds, iou_threshold).mota


def idf1_counts(gt: Frames, preds: Frames, iou_threshold: float = 0.5) -> tuple[int, int, int]:
    """(IDTP, total gt boxes, total predicted boxes) under the best one-to-one id matching."""
    total_gt = sum(len(v) for v in gt.values())
    total_pred = sum(len(v) for v in preds.values())
    if total_gt == 0 or total_pred == 0:
        return 0, total_gt, total_pred
    row = summarize(gt, preds, iou_threshold)
    return int(row["idtp"]), total_gt, total_pred


def idf1(gt: Frames, preds: Frames, iou_threshold: float = 0.5) -> float:
    idtp, total_gt, total_pred = idf1_counts(gt, preds, iou_threshold)
    if total_gt + total_pred == 0:
        return 0.0
    return 2.0 * idtp / (total_gt + total_pred)


def evaluate(gt: Frames, preds: Frames, name: str = "sequence", iou_threshold: float = 0.5) -> EvalReport:
    _require_gt(gt, name)
    last_gt = max(f for f, v in gt.items() if v)
    stray = [f for f, v in preds.items() if v and f > last_gt]
    if stray:
        raise MetricsError(
            f"{name}: predictions reach frame {max(stray)}, ground truth ends at {last_gt}"
        )
    row = summarize(gt, preds, iou_threshold, name)
    pred_count = int(row["num_predictions"])
    report = EvalReport(
        name=name,
        mota=float(row["mota"]),
        idf1=float(row["idf1"]) if pred_count else 0.0,
        idsw=int(row["num_switches"]),
        fp=int(row["num_false_positives"]),
        fn=int(row["num_misses"]),
        gt_count=int(row["num_objects"]),
        pred_count=pred_count,
        idtp=int(row["idtp"]) if pred_count else 0,
    )
    log.info(
        "%s: MOTA %.4f IDF1 %.4f IDSW %d FP %d FN %d",
        name, report.mota, report.idf1, report.idsw, report.fp, report.fn,
    )
    return report


def aggregate(reports: Sequence[EvalReport], name: str = "OVERALL") -> EvalReport:
    """Pool counts over sequences, then recompute MOTA and IDF1 from the totals."""
    gt_count = sum(r.gt_count for r in reports)
    pred_count = sum(r.pred_count for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    idsw = sum(r.idsw for r in reports)
    idtp = sum(r.idtp for r in reports)
    return EvalReport(
        name=name,
        mota=mota_score(fp, fn, idsw, gt_count),
        idf1=2.0 * idtp / (gt_count + pred_count) if gt_count + pred_count else 0.0,
        idsw=idsw,
        fp=fp,
        fn=fn,
        gt_count=gt_count,
        pred_count=pred_count,
        idtp=idtp,
        per_sequence=list(reports),
    )


# ── Report rendering ───────────────────────────────────

REPORT_COLUMNS = ["name", "MOTA", "IDF1", "IDSW", "FP", "FN", "GT", "Pred"]


def report_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = [
        {
            "name": r.name, "MOTA": r.mota, "IDF1": r.idf1, "IDSW": r.idsw,
            "FP": r.fp, "FN": r.fn, "GT": r.gt_count, "Pred": r.pred_count,
        }
        for r in reports
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def render_table(df: pd.DataFrame) -> str:
    return df.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> None:
    df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
