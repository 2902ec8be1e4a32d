"""Box geometry and appearance distance primitives.

Boxes are center-based everywhere inside the tracker; the top-left form only
appears at the file boundary (see ``core.storage``).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from core.models import BBox, Detection


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ix = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    iy = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (a.w * a.h + b.w * b.h - inter))


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(boxes_a), len(boxes_b))."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    a = np.array([b.as_array() for b in boxes_a])
    b = np.array([x.as_array() for x in boxes_b])
    a_lo, a_hi = a[:, None, :2] - a[:, None, 2:] / 2, a[:, None, :2] + a[:, None, 2:] / 2
    b_lo, b_hi = b[None, :, :2] - b[None, :, 2:] / 2, b[None, :, :2] + b[None, :, 2:] / 2
    extent = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = extent[..., 0] * extent[..., 1]
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    return inter / (area_a + area_b - inter)


def loc_sim(det: Detection, predicted: BBox) -> float:
    """Positional similarity: IoU of a detection with a track's predicted box."""
    return iou(det.box, predicted)


def cos_dist(f: np.ndarray, g: np.ndarray) -> float:
    """Cosine distance of two unit vectors, in [0, 2]."""
    if f.shape != g.shape:
        raise ValueError(f"embedding dimension mismatch: {f.shape} vs {g.shape}")
    return float(np.clip(1.0 - np.dot(f, g), 0.0, 2.0))


def normalize(v: np.ndarray) -> np.ndarray:
    """L2-normalize; a zero vector cannot be normalized."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return np.asarray(v, dtype=np.float64) / norm


def tlwh_to_center(x: float, y: float, w: float, h: float) -> BBox:
    return BBox(x + w / 2, y + h / 2, w, h)


def center_to_tlwh(box: BBox) -> tuple[float, float, float, float]:
    return box.cx - box.w / 2, box.cy - box.h / 2, box.w, box.h
