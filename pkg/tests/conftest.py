from __future__ import annotations

import itertools
from typing import Optional

import numpy as np
import pytest

from core.models import BBox, Detection


def _make_det(
    cx: float,
    cy: float,
    w: float = 10.0,
    h: float = 20.0,
    conf: float = 0.9,
    line: int = 1,
    frame: int = 1,
    emb: Optional[np.ndarray] = None,
) -> Detection:
    return Detection(frame=frame, box=BBox(cx, cy, w, h), conf=conf, embedding=emb, source_line=line)


def _unit(*components: float) -> np.ndarray:
    v = np.asarray(components, dtype=np.float64)
    return v / np.linalg.norm(v)


@pytest.fixture
def make_det():
    return _make_det


@pytest.fixture
def unit():
    return _unit


@pytest.fixture
def line_ids():
    """Fresh 1, 2, 3, ... counter for detection ids."""
    return itertools.count(1)
