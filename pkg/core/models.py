from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

# Floor applied to predicted extents so a shrinking Kalman state still yields a valid box.
MIN_EXTENT = 1e-3


class ConfigError(ValueError):
    """Unknown config key, unparseable value or TrackerConfig invariant violation."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center form: (cx, cy) is the center, w/h the extent in px."""
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError(f"non-finite box ({self.cx}, {self.cy}, {self.w}, {self.h})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got w={self.w} h={self.h}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Detection:
    """One detector output in one frame.

    ``source_line`` is the 1-based line of the detection file the box came
    from. It is unique within a sequence and doubles as the detection id in
    assignments.
    """
    frame: int
    box: BBox
    conf: float
    embedding: Optional[np.ndarray] = None
    source_line: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.conf <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.conf}")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must be unit-norm, got norm {norm:.6f}")

    @property
    def det_id(self) -> int:
        return self.source_line


@dataclass
class FramePartition:
    """Reliable / unreliable / discarded split of one frame's detections."""
    first: list[Detection] = field(default_factory=list)
    second: list[Detection] = field(default_factory=list)
    discarded: list[Detection] = field(default_factory=list)


@dataclass(frozen=True)
class AssignmentSet:
    """Conflict-free set of (detection id, track id) pairs."""
    pairs: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        pairs = frozenset((int(d), int(t)) for d, t in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        det_ids = [d for d, _ in pairs]
        track_ids = [t for _, t in pairs]
        if len(set(det_ids)) != len(det_ids):
            raise ValueError("detection assigned to more than one track")
        if len(set(track_ids)) != len(track_ids):
            raise ValueError("track assigned to more than one detection")

    @cached_property
    def track_of(self) -> dict[int, int]:
        return {d: t for d, t in self.pairs}

    @cached_property
    def det_of(self) -> dict[int, int]:
        return {t: d for d, t in self.pairs}

    def det_ids(self) -> set[int]:
        return set(self.track_of)

    def track_ids(self) -> set[int]:
        return set(self.det_of)

    def union(self, other: Iterable[tuple[int, int]]) -> AssignmentSet:
        return AssignmentSet(self.pairs | frozenset(other))

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(sorted(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: object) -> bool:
        return pair in self.pairs


@dataclass(frozen=True)
class TrackerConfig:
    """All tracker thresholds and module toggles.

    Defaults follow ByteTrack's settings plus κ=0.3 and the 0.7 / 0.95 ONMS
    thresholds.
    """
    kappa: float = 0.3
    conf_first: float = 0.6
    conf_second: float = 0.1
    nms_first: float = 0.7
    nms_second: float = 0.95
    gate_first: float = 0.2
    gate_second: float = 0.5
    init_conf: float = 0.7
    max_age: int = 30
    ema_alpha: float = 0.9
    min_hits: int = 2
    use_onms: bool = True
    use_ddm: bool = True
    use_tdm: bool = True
    use_adm: bool = True
    use_second_stage: bool = True
    kf_process_scale: float = 1.0
    kf_measurement_scale: float = 1.0

    _UNIT_FIELDS = (
        "kappa", "conf_first", "conf_second", "nms_first", "nms_second",
        "gate_first", "gate_second", "init_conf", "ema_alpha",
    )

    def __post_init__(self) -> None:
        for name in self._UNIT_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if not self.nms_first < self.nms_second:
            raise ConfigError(
                f"nms_first ({self.nms_first}) must be below nms_second ({self.nms_second})"
            )
        if not self.conf_second < self.conf_first:
            raise ConfigError(
                f"conf_second ({self.conf_second}) must be below conf_first ({self.conf_first})"
            )
        if self.max_age < 1:
            raise ConfigError(f"max_age must be >= 1, got {self.max_age}")
        if self.min_hits < 1:
            raise ConfigError(f"min_hits must be >= 1, got {self.min_hits}")
        if self.kf_process_scale < 0:
            raise ConfigError(f"kf_process_scale must be >= 0, got {self.kf_process_scale}")
        if self.kf_measurement_scale <= 0:
            raise ConfigError(f"kf_measurement_scale must be > 0, got {self.kf_measurement_scale}")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}

    @property
    def dda_enabled(self) -> bool:
        return self.use_ddm or self.use_tdm or self.use_adm

    def with_changes(self, **changes) -> TrackerConfig:
        return replace(self, **changes)

    def baseline(self) -> TrackerConfig:
        """Same thresholds with ONMS and every DDA module switched off."""
        return replace(self, use_onms=False, use_ddm=False, use_tdm=False, use_adm=False)


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Mean (cx, cy, w, h, vcx, vcy, vw, vh) and its 8x8 covariance."""
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> BBox:
        cx, cy, w, h = (float(v) for v in self.mean[:4])
        return BBox(cx, cy, max(w, MIN_EXTENT), max(h, MIN_EXTENT))


class TrackState(str, Enum):
    TENTATIVE = "tentative"
    TRACKED = "tracked"
    LOST = "lost"
    REMOVED = "removed"


@dataclass(eq=False)
class Track:
    """A persistent identity with its motion state and appearance feature."""
    id: int
    state: TrackState
    kf: KalmanState
    start_frame: int
    last_update_frame: int
    feature: Optional[np.ndarray] = None
    hits: int = 1
    conf: float = 0.0
    history: list[tuple[int, BBox]] = field(default_factory=list)

    @property
    def box(self) -> BBox:
        return self.kf.box

    @property
    def is_active(self) -> bool:
        return self.state is not TrackState.REMOVED


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    box: BBox
    conf: float


@dataclass
class FrameResult:
    """Boxes reported for one frame: one entry per Tracked track updated in it."""
    frame: int
    outputs: list[TrackOutput] = field(default_factory=list)


@dataclass(frozen=True)
class Annotation:
    """One row of a ground-truth or result file."""
    frame: int
    track_id: int
    box: BBox
    conf: float = 1.0


@dataclass
class SequenceBundle:
    """Detections of one sequence grouped by frame, plus optional ground truth."""
    name: str
    frame_count: int = 0
    detections: dict[int, list[Detection]] = field(default_factory=dict)
    ground_truth: Optional[dict[int, list[Annotation]]] = None

    def all_detections(self) -> list[Detection]:
        """Every detection in detection-file line order."""
        dets = [d for frame_dets in self.detections.values() for d in frame_dets]
        return sorted(dets, key=lambda d: d.source_line)

    @property
    def detection_count(self) -> int:
        return sum(len(v) for v in self.detections.values())

    @property
    def has_embeddings(self) -> bool:
        dets = self.all_detections()
        return bool(dets) and all(d.embedding is not None for d in dets)

    def frame(self, frame: int) -> list[Detection]:
        return self.detections.get(frame, [])


@dataclass
class EvalReport:
    """CLEAR + IDF1 summary for one sequence, or an aggregate over several."""
    name: str
    mota: float
    idf1: float
    idsw: int
    fp: int
    fn: int
    gt_count: int
    pred_count: int = 0
    idtp: int = 0
    per_sequence: list[EvalReport] = field(default_factory=list)


@dataclass(frozen=True)
class OcclusionModel:
    """How a scenario degrades occluded detections.

    ``decay`` = 1 makes confidence equal to visibility; smaller values keep
    occluded boxes confident.
    """
    decay: float = 1.0
    min_visibility: float = 0.15
    drop_scale: float = 0.0

    def confidence(self, visibility: float) -> float:
        return float(min(1.0, max(0.0, 1.0 - self.decay * (1.0 - visibility))))

    def drop_probability(self, visibility: float) -> float:
        if visibility < self.min_visibility:
            return 1.0
        return float(min(1.0, max(0.0, self.drop_scale * (1.0 - visibility))))


@dataclass(frozen=True)
class Agent:
    """A synthetic target following a piecewise-linear path.

    ``waypoints`` holds (frame, cx, cy) keyframes in increasing frame order;
    the agent exists from the first keyframe to the last.
    """
    id: int
    waypoints: tuple[tuple[int, float, float], ...]
    w: float
    h: float

    @property
    def first_frame(self) -> int:
        return self.waypoints[0][0]

    @property
    def last_frame(self) -> int:
        return self.waypoints[-1][0]

    def box(self, frame: int) -> Optional[BBox]:
        if not self.first_frame <= frame <= self.last_frame:
            return None
        keys = np.array([p[0] for p in self.waypoints], dtype=np.float64)
        cx = float(np.interp(frame, keys, [p[1] for p in self.waypoints]))
        cy = float(np.interp(frame, keys, [p[2] for p in self.waypoints]))
        return BBox(cx, cy, self.w, self.h)


@dataclass(frozen=True)
class Scenario:
    """A seeded synthetic sequence.

    ``event`` is the (first, last) frame of the situation the scenario is
    built to stress, e.g. the crossing frame or the occluded stretch.
    """
    seed: int
    agents: tuple[Agent, ...]
    frames: int
    noise: float = 0.0
    occlusion: OcclusionModel = OcclusionModel()
    embed_dim: int = 32
    embed_noise: float = 0.1
    arena: tuple[float, float] = (1920.0, 1080.0)
    name: str = "synthetic"
    event: tuple[int, int] = (0, 0)


@dataclass
class RunManifest:
    """Inputs and switches of one ``track`` / ``ablate`` invocation."""
    det_paths: list[Path]
    out_path: Path
    emb_paths: list[Optional[Path]] = field(default_factory=list)
    config_path: Optional[Path] = None
    overrides: dict[str, object] = field(default_factory=dict)

    def validate(self) -> None:
        """Fail before any work if a referenced input is missing."""
        if self.emb_paths and len(self.emb_paths) != len(self.det_paths):
            raise ValueError("give one --emb per --det, or none")
        for path in self.det_paths:
            if not path.is_file():
                raise ValueError(f"detection file not found: {path}")
        if self.config_path is not None and not self.config_path.is_file():
            raise ValueError(f"config file not found: {self.config_path}")
