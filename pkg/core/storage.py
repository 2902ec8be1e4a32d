"""MOT-Challenge text files, embedding sidecars and the tracker config file.

Boxes are top-left ``x,y,w,h`` on disk and center form in memory; the
conversion happens here and nowhere else. Frames are 1-based. All numbers
are parsed with ``float``/``int``, so a decimal point is the only accepted
separator regardless of locale.
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from core.geometry import center_to_tlwh, normalize, tlwh_to_center
from core.models import (
    Annotation,
    ConfigError,
    Detection,
    FrameResult,
    SequenceBundle,
    TrackerConfig,
)

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

__all__ = [
    "ConfigError", "ParseError",
    "read_det", "read_embeddings", "read_gt", "read_tracks", "read_config",
    "write_results", "write_detections", "write_embeddings", "write_ground_truth",
]


class ParseError(ValueError):
    """Malformed line in a MOT or embedding file; the message starts with ``path:line``."""

    def __init__(self, path: PathLike, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


# ── Low-level helpers ──────────────────────────────────

def _lines(path: PathLike) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, stripped text) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.strip()
            if text:
                yield lineno, text


def _float(path: PathLike, lineno: int, field: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(path, lineno, f"{field} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"{field} is not finite: {raw!r}")
    return value


def _int(path: PathLike, lineno: int, field: str, raw: str) -> int:
    value = _float(path, lineno, field, raw)
    if not value.is_integer():
        raise ParseError(path, lineno, f"{field} must be an integer, got {raw!r}")
    return int(value)


def _split(path: PathLike, lineno: int, text: str, min_fields: int) -> list[str]:
    fields = [f.strip() for f in text.split(",")]
    if len(fields) < min_fields:
        raise ParseError(path, lineno, f"expected at least {min_fields} fields, got {len(fields)}")
    return fields


def _parse_box(path: PathLike, lineno: int, fields: list[str]):
    x, y, w, h = (_float(path, lineno, name, raw) for name, raw in zip("xywh", fields[2:6]))
    if w <= 0 or h <= 0:
        raise ParseError(path, lineno, f"box extent must be positive, got w={w} h={h}")
    return tlwh_to_center(x, y, w, h)


def _parse_frame(path: PathLike, lineno: int, raw: str) -> int:
    frame = _int(path, lineno, "frame", raw)
    if frame < 1:
        raise ParseError(path, lineno, f"frame must be >= 1, got {frame}")
    return frame


def _atomic_write(path: PathLike, lines: Iterable[str]) -> None:
    """Write to a temp file next to ``path`` and rename it into place."""
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# ── Detections & embeddings ────────────────────────────

def read_det(path: PathLike, name: Optional[str] = None) -> SequenceBundle:
    """Parse ``frame,id,x,y,w,h,conf,...`` lines; the id field is ignored.

    Each detection remembers its line number as ``source_line``. Frames are
    returned in increasing order, file order kept within a frame.
    """
    by_frame: dict[int, list[Detection]] = {}
    for lineno, text in _lines(path):
        fields = _split(path, lineno, text, 7)
        frame = _parse_frame(path, lineno, fields[0])
        box = _parse_box(path, lineno, fields)
        conf = _float(path, lineno, "conf", fields[6])
        if not 0.0 <= conf <= 1.0:
            raise ParseError(path, lineno, f"confidence must be in [0, 1], got {conf}")
        by_frame.setdefault(frame, []).append(
            Detection(frame=frame, box=box, conf=conf, source_line=lineno)
        )

    bundle = SequenceBundle(
        name=name or Path(path).stem,
        frame_count=max(by_frame, default=0),
        detections={k: by_frame[k] for k in sorted(by_frame)},
    )
    log.debug("%s: %d detections over %d frames", path, bundle.detection_count, bundle.frame_count)
    return bundle


def read_embeddings(path: PathLike, bundle: SequenceBundle) -> SequenceBundle:
    """Attach L2-normalized embeddings; row k belongs to the k-th detection line."""
    rows: list[np.ndarray] = []
    dim: Optional[int] = None
    for lineno, text in _lines(path):
        vec = np.array(
            [_float(path, lineno, f"component {i + 1}", raw) for i, raw in enumerate(text.split(","))]
        )
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ParseError(path, lineno, f"expected {dim} components, got {vec.size}")
        try:
            rows.append(normalize(vec))
        except ValueError:
            raise ParseError(path, lineno, "zero embedding cannot be normalized") from None

    dets = bundle.all_detections()
    if len(rows) != len(dets):
        raise ValueError(
            f"{path}: {len(rows)} embedding rows for {len(dets)} detections"
        )

    attached = {d.source_line: replace(d, embedding=e) for d, e in zip(dets, rows)}
    return replace(
        bundle,
        detections={
            frame: [attached[d.source_line] for d in frame_dets]
            for frame, frame_dets in bundle.detections.items()
        },
    )


def write_detections(path: PathLike, bundle: SequenceBundle) -> None:
    """Detection file in line order of ``bundle.all_detections()``; id column is -1."""
    def lines():
        for det in bundle.all_detections():
            x, y, w, h = center_to_tlwh(det.box)
            yield f"{det.frame},-1,{x:.2f},{y:.2f},{w:.2f},{h:.2f},{det.conf:.4f},-1,-1,-1"
    _atomic_write(path, lines())


def write_embeddings(path: PathLike, bundle: SequenceBundle) -> None:
    """One comma-separated row per detection, aligned with ``write_detections``."""
    def lines():
        for det in bundle.all_detections():
            if det.embedding is None:
                raise ValueError(f"detection on line {det.source_line} has no embedding")
            yield ",".join(f"{v:.6f}" for v in det.embedding)
    _atomic_write(path, lines())


# ── Ground truth & results ─────────────────────────────

def _read_annotations(path: PathLike, flagged: bool) -> dict[int, list[Annotation]]:
    by_frame: dict[int, list[Annotation]] = {}
    for lineno, text in _lines(path):
        fields = _split(path, lineno, text, 6)
        frame = _parse_frame(path, lineno, fields[0])
        track_id = _int(path, lineno, "id", fields[1])
        box = _parse_box(path, lineno, fields)
        score = _float(path, lineno, "conf", fields[6]) if len(fields) > 6 else 1.0
        if flagged and score == 0:
            continue
        by_frame.setdefault(frame, []).append(
            Annotation(frame, track_id, box, score if not flagged else 1.0)
        )
    return {k: by_frame[k] for k in sorted(by_frame)}


def read_gt(path: PathLike) -> dict[int, list[Annotation]]:
    """MOT ground truth ``frame,id,x,y,w,h,flag,...``; rows with flag 0 are ignored."""
    return _read_annotations(path, flagged=True)


def read_tracks(path: PathLike) -> dict[int, list[Annotation]]:
    """Tracker result file as written by ``write_results``."""
    return _read_annotations(path, flagged=False)


def write_ground_truth(path: PathLike, annotations: dict[int, list[Annotation]]) -> None:
    def lines():
        for frame in sorted(annotations):
            for a in sorted(annotations[frame], key=lambda a: a.track_id):
                x, y, w, h = center_to_tlwh(a.box)
                yield f"{frame},{a.track_id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},1,1,1.0"
    _atomic_write(path, lines())


def write_results(path: PathLike, results: Iterable[FrameResult]) -> None:
    """``frame,id,x,y,w,h,conf,-1,-1,-1`` with top-left boxes, sorted by (frame, id)."""
    rows = sorted(
        ((r.frame, o.track_id, o) for r in results for o in r.outputs),
        key=lambda row: (row[0], row[1]),
    )

    def lines():
        for frame, track_id, out in rows:
            x, y, w, h = center_to_tlwh(out.box)
            yield f"{frame},{track_id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},{out.conf:.2f},-1,-1,-1"
    _atomic_write(path, lines())


# ── Config ─────────────────────────────────────────────

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key: str, raw: str, kind: type):
    if kind is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind is int:
            return int(raw)
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: expected a finite number, got {raw!r}")
    return value


def parse_overrides(pairs: dict[str, str]) -> dict[str, object]:
    """Coerce string values to the types of the matching TrackerConfig fields."""
    types = TrackerConfig.field_types()
    out: dict[str, object] = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw, types[key])
    return out


def read_config(path: Optional[PathLike] = None, base: Optional[TrackerConfig] = None) -> TrackerConfig:
    """``key = value`` lines with ``#`` comments; unspecified keys keep their defaults."""
    base = base or TrackerConfig()
    if path is None:
        return base
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            raw[key.strip()] = value.strip()
    return base.with_changes(**parse_overrides(raw))
