"""Per-frame tracking loop: partition, predict, associate, disambiguate, manage lifecycles."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from core.assignment import build_cost, solve
from core.dda import DDAContext, TrackView, run_dda
from core.geometry import normalize
from core.models import (
    AssignmentSet,
    Detection,
    FrameResult,
    SequenceBundle,
    Track,
    TrackerConfig,
    TrackOutput,
    TrackState,
)
from core.motion import KalmanFilter
from core.onms import partition

log = logging.getLogger(__name__)


class FrameOrderError(ValueError):
    """Frames stepped out of order, or a detection handed to the wrong frame."""


def update_feature(track: Track, f_d: np.ndarray, alpha: float) -> Track:
    """EMA of the track's appearance feature, renormalized to unit length."""
    f_d = np.asarray(f_d, dtype=np.float64)
    if track.feature is None:
        track.feature = f_d.copy()
        return track
    try:
        track.feature = normalize(alpha * track.feature + (1.0 - alpha) * f_d)
    except ValueError:
        # Opposite vectors blended to zero; restart from the observation.
        track.feature = f_d.copy()
    return track


class Tracker:
    """One tracker per sequence. Not thread-safe; step frames in increasing order."""

    def __init__(self, cfg: Optional[TrackerConfig] = None, name: str = "sequence"):
        self.cfg = cfg or TrackerConfig()
        self.name = name
        self._kf = KalmanFilter(
            process_scale=self.cfg.kf_process_scale,
            measurement_scale=self.cfg.kf_measurement_scale,
        )
        self._tracks: list[Track] = []
        self._results: list[FrameResult] = []
        self._next_id = 1
        self._first_frame: Optional[int] = None
        self._last_frame: Optional[int] = None

    @property
    def tracks(self) -> list[Track]:
        return [t for t in self._tracks if t.is_active]

    @property
    def created(self) -> int:
        return self._next_id - 1

    def _check_frame(self, dets: Sequence[Detection], frame: int) -> None:
        if self._last_frame is not None and frame <= self._last_frame:
            raise FrameOrderError(f"frame {frame} stepped after frame {self._last_frame}")
        for det in dets:
            if det.frame != frame:
                raise FrameOrderError(
                    f"detection {det.det_id} belongs to frame {det.frame}, not {frame}"
                )
        ids = [d.det_id for d in dets]
        if len(set(ids)) != len(ids):
            raise ValueError(f"frame {frame}: duplicate detection ids")

    def _spawn(self, det: Detection, frame: int) -> Track:
        confirmed = frame == self._first_frame or self.cfg.min_hits <= 1
        kf = self._kf.initiate(det.box)
        track = Track(
            id=self._next_id,
            state=TrackState.TRACKED if confirmed else TrackState.TENTATIVE,
            kf=kf,
            start_frame=frame,
            last_update_frame=frame,
            feature=None if det.embedding is None else det.embedding.copy(),
            conf=det.conf,
            history=[(frame, kf.box)],
        )
        self._next_id += 1
        self._tracks.append(track)
        return track

    def _apply(self, track: Track, det: Detection, frame: int, appearance: bool) -> None:
        track.kf = self._kf.update(track.kf, det.box)
        track.last_update_frame = frame
        track.hits += 1
        track.conf = det.conf
        track.history.append((frame, track.kf.box))
        if appearance and det.embedding is not None:
            update_feature(track, det.embedding, self.cfg.ema_alpha)
        if track.state is TrackState.LOST:
            track.state = TrackState.TRACKED
        elif track.state is TrackState.TENTATIVE and track.hits >= self.cfg.min_hits:
            track.state = TrackState.TRACKED

    def step(self, dets: Sequence[Detection], frame: int) -> FrameResult:
        cfg = self.cfg
        self._check_frame(dets, frame)
        if self._first_frame is None:
            self._first_frame = frame
        self._last_frame = frame

        part = partition(dets, cfg)
        active = self.tracks
        for t in active:
            t.kf = self._kf.predict(t.kf)
        views = [TrackView(t.id, t.box, t.feature) for t in active]
        view_ids = [v.id for v in views]

        cost = build_cost(part.first, [v.predicted for v in views], cfg.gate_first, view_ids)
        assignment = solve(cost)
        first, second = part.first, part.second
        if cfg.dda_enabled:
            ctx = DDAContext(assignment, first, second, views, cfg.kappa, cfg.gate_first)
            assignment, first, second = run_dda(ctx, cfg.use_ddm, cfg.use_tdm, cfg.use_adm)

        late = AssignmentSet()
        if cfg.use_second_stage and second:
            leftover = [v for v in views if v.id not in assignment.det_of]
            if leftover:
                cost = build_cost(
                    second, [v.predicted for v in leftover], cfg.gate_second,
                    [v.id for v in leftover],
                )
                late = solve(cost)

        det_by_id = {d.det_id: d for d in dets}
        track_by_id = {t.id: t for t in active}
        for det_id, track_id in assignment:
            self._apply(track_by_id[track_id], det_by_id[det_id], frame, appearance=True)
        for det_id, track_id in late:
            self._apply(track_by_id[track_id], det_by_id[det_id], frame, appearance=False)

        matched = assignment.track_ids() | late.track_ids()
        for t in active:
            if t.id in matched:
                continue
            if t.state is TrackState.TENTATIVE:
                t.state = TrackState.REMOVED
            elif t.state is TrackState.TRACKED:
                t.state = TrackState.LOST
            if t.state is TrackState.LOST and frame - t.last_update_frame > cfg.max_age:
                t.state = TrackState.REMOVED

        used = assignment.det_ids()
        born = 0
        for det in first:
            if det.det_id not in used and det.conf >= cfg.init_conf:
                self._spawn(det, frame)
                born += 1

        self._tracks = [t for t in self._tracks if t.is_active]
        result = FrameResult(frame, [
            TrackOutput(t.id, t.box, t.conf)
            for t in sorted(self._tracks, key=lambda t: t.id)
            if t.state is TrackState.TRACKED and t.last_update_frame == frame
        ])
        self._results.append(result)
        log.debug(
            "%s frame %d: %d/%d/%d first/second/discarded, %d+%d matched, %d born, %d reported",
            self.name, frame, len(part.first), len(part.second), len(part.discarded),
            len(assignment), len(late), born, len(result.outputs),
        )
        return result

    def finalize(self) -> list[FrameResult]:
        return list(self._results)


def run_sequence(bundle: SequenceBundle, cfg: Optional[TrackerConfig] = None) -> Tracker:
    """Step every frame from 1 to the last frame of ``bundle``, empty frames included."""
    tracker = Tracker(cfg, bundle.name)
    last = max([bundle.frame_count, *bundle.detections.keys()], default=0)
    for frame in range(1, last + 1):
        tracker.step(bundle.frame(frame), frame)
    results = tracker.finalize()
    log.info(
        "%s: %d frames, %d tracks created, %d ids reported",
        bundle.name, len(results), tracker.created,
        len({o.track_id for r in results for o in r.outputs}),
    )
    return tracker


def track_sequence(bundle: SequenceBundle, cfg: Optional[TrackerConfig] = None) -> list[FrameResult]:
    return run_sequence(bundle, cfg).finalize()
