"""Occlusion-aware NMS: route each raw detection to the reliable, unreliable or discarded set.

Suppression is one-shot: a detection's score is its max IoU against every
higher-confidence raw detection of the frame, whether or not that detection
is itself suppressed. Equal confidences are ordered by input position, the
earlier detection counting as the higher one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.geometry import iou_matrix
from core.models import Detection, FramePartition, TrackerConfig


@dataclass(frozen=True)
class SuppressionScore:
    det_id: int
    u: float


def _suppression_values(dets: Sequence[Detection]) -> np.ndarray:
    n = len(dets)
    if n == 0:
        return np.zeros(0)
    overlaps = iou_matrix([d.box for d in dets], [d.box for d in dets])
    conf = np.array([d.conf for d in dets])
    order = np.arange(n)
    # higher[i, j]: detection j outranks detection i
    higher = (conf[None, :] > conf[:, None]) | (
        (conf[None, :] == conf[:, None]) & (order[None, :] < order[:, None])
    )
    return np.where(higher, overlaps, 0.0).max(axis=1)


def suppression_scores(dets: Sequence[Detection]) -> list[SuppressionScore]:
    return [SuppressionScore(d.det_id, float(u)) for d, u in zip(dets, _suppression_values(dets))]


def split(
    dets: Sequence[Detection],
    conf_first: float,
    conf_second: float,
    nms_first: float,
    nms_second: float,
) -> FramePartition:
    """Two confidence bands and two NMS thresholds; input order is preserved.

    With ``nms_second == nms_first`` this is the plain single-threshold
    ByteTrack split.
    """
    part = FramePartition()
    for det, u in zip(dets, _suppression_values(dets)):
        if det.conf >= conf_first and u <= nms_first:
            part.first.append(det)
        elif conf_second <= det.conf < conf_first and u <= nms_first:
            part.second.append(det)
        elif det.conf >= conf_first and nms_first < u <= nms_second:
            part.second.append(det)
        else:
            part.discarded.append(det)
    return part


def partition(dets: Sequence[Detection], cfg: TrackerConfig) -> FramePartition:
    """Partition one frame; with ``cfg.use_onms`` off the second NMS threshold collapses onto the first."""
    nms_second = cfg.nms_second if cfg.use_onms else cfg.nms_first
    return split(dets, cfg.conf_first, cfg.conf_second, cfg.nms_first, nms_second)
