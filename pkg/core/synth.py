"""Seeded synthetic sequences: exact ground truth, degraded detections, identity embeddings.

Agents are drawn in painter's order: an agent with a higher index occludes
every agent with a lower one. A detection's visibility is 1 minus its
largest IoU with any occluder present in the same frame; the scenario's
OcclusionModel turns visibility into a confidence and a drop probability.

Identity embeddings are orthonormal base vectors (one per agent) plus
Gaussian noise, renormalized. Two identities stay separable by cosine
distance as long as ``embed_noise <= 1 / sqrt(embed_dim)``.

All randomness comes from one Philox generator keyed by the scenario seed.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from core import storage
from core.geometry import iou_matrix, normalize, tlwh_to_center
from core.models import (
    Agent,
    Annotation,
    BBox,
    Detection,
    OcclusionModel,
    Scenario,
    SequenceBundle,
)

log = logging.getLogger(__name__)

ARENA_CENTER = (960.0, 540.0)
# Per-coordinate std of the detection jitter in the canned scenarios, in px.
JITTER = 2.0


def separability_bound(embed_dim: int) -> float:
    """Largest per-component embedding noise the canned scenarios rely on."""
    return 1.0 / math.sqrt(embed_dim)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _identity_embeddings(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """One unit vector per agent, mutually orthogonal when n <= dim."""
    m = rng.standard_normal((dim, max(n, 1)))
    if n <= dim:
        q, _ = np.linalg.qr(m)
        return q[:, :n].T
    return (m / np.linalg.norm(m, axis=0, keepdims=True)).T[:n]


def visibility(boxes: list[Optional[BBox]], k: int) -> float:
    """1 - max IoU of agent k's box against the boxes of higher-index agents."""
    occluders = [b for b in boxes[k + 1:] if b is not None]
    if boxes[k] is None or not occluders:
        return 1.0
    return 1.0 - float(iou_matrix([boxes[k]], occluders).max())


def _check_arena(s: Scenario) -> None:
    width, height = s.arena
    for agent in s.agents:
        for frame, cx, cy in agent.waypoints:
            if not (agent.w / 2 <= cx <= width - agent.w / 2 and agent.h / 2 <= cy <= height - agent.h / 2):
                raise ValueError(f"agent {agent.id} leaves the arena at frame {frame}")


def _rounded_box(box: BBox) -> BBox:
    """Snap to the 2-decimal top-left grid the MOT writers use."""
    x, y = round(box.cx - box.w / 2, 2), round(box.cy - box.h / 2, 2)
    return tlwh_to_center(x, y, round(box.w, 2), round(box.h, 2))


def generate(s: Scenario) -> tuple[SequenceBundle, SequenceBundle]:
    """Ground-truth bundle and detection bundle (with embeddings) for ``s``."""
    _check_arena(s)
    rng = _rng(s.seed)
    identities = _identity_embeddings(rng, len(s.agents), s.embed_dim)

    truth: dict[int, list[Annotation]] = {}
    detections: dict[int, list[Detection]] = {}
    line = 0
    for frame in range(1, s.frames + 1):
        boxes = [agent.box(frame) for agent in s.agents]
        for k, (agent, box) in enumerate(zip(s.agents, boxes)):
            if box is None:
                continue
            truth.setdefault(frame, []).append(Annotation(frame, agent.id, _rounded_box(box)))

            vis = visibility(boxes, k)
            if rng.random() < s.occlusion.drop_probability(vis):
                continue
            if s.noise > 0:
                jitter = rng.normal(0.0, s.noise, 4)
                box = BBox(
                    box.cx + jitter[0], box.cy + jitter[1],
                    max(box.w + jitter[2], 1.0), max(box.h + jitter[3], 1.0),
                )
            embedding = normalize(identities[k] + rng.normal(0.0, s.embed_noise, s.embed_dim))
            line += 1
            detections.setdefault(frame, []).append(Detection(
                frame=frame,
                box=_rounded_box(box),
                conf=round(s.occlusion.confidence(vis), 4),
                embedding=embedding,
                source_line=line,
            ))

    gt = SequenceBundle(s.name, s.frames, {}, ground_truth=truth)
    dets = SequenceBundle(s.name, s.frames, detections)
    log.debug("%s: %d gt boxes, %d detections", s.name, sum(map(len, truth.values())), line)
    return gt, dets


# ── Canned scenarios ───────────────────────────────────

def crossing_scenario(seed: int, frames: int = 80, noise: float = JITTER) -> Scenario:
    """Two agents walk toward each other, meet head-on and turn back.

    The meeting frame is ``event[0]``. A motion-only tracker extrapolates
    both tracks through the meeting point and swaps them.
    """
    mid = frames // 2
    cx, cy = ARENA_CENTER
    speed, reach = 2.0, 2.0 * (mid - 1)
    left = Agent(1, ((1, cx - reach, cy), (mid, cx, cy), (frames, cx - speed * (frames - mid), cy)), 40.0, 80.0)
    right = Agent(2, ((1, cx + reach, cy), (mid, cx, cy), (frames, cx + speed * (frames - mid), cy)), 40.0, 80.0)
    dim = 32
    return Scenario(
        seed=seed,
        agents=(left, right),
        frames=frames,
        noise=noise,
        occlusion=OcclusionModel(decay=1.0),
        embed_dim=dim,
        embed_noise=separability_bound(dim),
        name=f"crossing-{seed}",
        event=(mid, mid),
    )


def occlusion_scenario(seed: int, frames: int = 160, noise: float = JITTER) -> Scenario:
    """A fast agent passes behind a slow one and re-emerges on the far side.

    Occlusion barely lowers confidence, so the hidden agent's box stays
    confident while its overlap with the occluder climbs above the first
    NMS threshold; the stretch where visibility falls below the drop floor
    is ``event``.
    """
    cx, cy = ARENA_CENTER
    w, h = 40.0, 80.0
    fast = Agent(1, ((1, cx - 400.0, cy), (frames, cx - 400.0 + 2.0 * (frames - 1), cy)), w, h)
    slow = Agent(2, ((1, cx - 320.0, cy), (frames, cx - 320.0 + 1.0 * (frames - 1), cy)), w, h)
    # Relative offset after frame f is 80 - (f - 1); dropped while |offset| <= 3.
    return Scenario(
        seed=seed,
        agents=(fast, slow),
        frames=frames,
        noise=noise,
        occlusion=OcclusionModel(decay=0.3),
        name=f"occlusion-{seed}",
        event=(78, 84),
    )


def fragmentation_scenario(
    seed: int, frames: int = 100, join: int = 30, leave: int = 70, noise: float = JITTER,
) -> Scenario:
    """A second agent walks right beside the first between ``join`` and ``leave``.

    The overlap holds the first agent's confidence at 0.5, inside the
    unreliable band, while the newcomer's confident box sits on the first
    agent's predicted position.
    """
    cx, cy = ARENA_CENTER
    w, h, speed = 40.0, 80.0, 2.0
    x0 = cx - 200.0
    walker = Agent(1, ((1, x0, cy), (frames, x0 + speed * (frames - 1), cy)), w, h)
    escort = Agent(
        2,
        (
            (join, x0 + speed * (join - 1) + w / 3, cy),
            (leave, x0 + speed * (leave - 1) + w / 3, cy),
        ),
        w, h,
    )
    return Scenario(
        seed=seed,
        agents=(walker, escort),
        frames=frames,
        noise=noise,
        occlusion=OcclusionModel(decay=1.0),
        name=f"fragmentation-{seed}",
        event=(join, leave),
    )


SCENARIOS: dict[str, Callable[[int], Scenario]] = {
    "crossing": crossing_scenario,
    "occlusion": occlusion_scenario,
    "fragmentation": fragmentation_scenario,
}


def make_scenario(kind: str, seed: int) -> Scenario:
    try:
        return SCENARIOS[kind](seed)
    except KeyError:
        raise ValueError(
            f"unknown scenario kind {kind!r} (choose from {', '.join(sorted(SCENARIOS))})"
        ) from None


def write_scenario(s: Scenario, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Write ``gt.txt``, ``det.txt`` and ``emb.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt, dets = generate(s)
    paths = {"gt": out / "gt.txt", "det": out / "det.txt", "emb": out / "emb.csv"}
    storage.write_ground_truth(paths["gt"], gt.ground_truth or {})
    storage.write_detections(paths["det"], dets)
    storage.write_embeddings(paths["emb"], dets)
    log.info("%s: wrote %s", s.name, ", ".join(str(p) for p in paths.values()))
    return paths
