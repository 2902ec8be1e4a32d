"""Configuration grids for ablation runs and their scoring.

A grid is a list of labelled TrackerConfig rows: a κ sweep, every on/off
combination of a set of components, or the cross product of both.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import pandas as pd

from core import metrics
from core.models import Annotation, EvalReport, FrameResult, SequenceBundle, TrackerConfig
from core.synth import generate, make_scenario
from core.tracker import track_sequence

log = logging.getLogger(__name__)

# Ablation component name -> TrackerConfig toggle.
COMPONENTS = {
    "onms": "use_onms",
    "ddm": "use_ddm",
    "tdm": "use_tdm",
    "adm": "use_adm",
    "byte": "use_second_stage",
}

TABLE_COLUMNS = ["config", "kappa", "MOTA", "IDF1", "IDSW", "FP", "FN"]


@dataclass(frozen=True)
class GridRow:
    label: str
    cfg: TrackerConfig


def parse_floats(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise ValueError("empty value list")
    return values


def parse_ints(text: str) -> list[int]:
    """Comma-separated integers and inclusive ``a-b`` ranges, e.g. ``0-4,10``."""
    out: list[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep and lo:
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ValueError(f"bad integer or range {part!r}") from None
    if not out:
        raise ValueError("empty value list")
    return out


def parse_components(text: str) -> list[str]:
    names = [c.strip().lower() for c in text.split(",") if c.strip()]
    unknown = [c for c in names if c not in COMPONENTS]
    if unknown:
        raise ValueError(
            f"unknown component(s) {', '.join(unknown)} (choose from {', '.join(COMPONENTS)})"
        )
    if len(set(names)) != len(names):
        raise ValueError("components listed more than once")
    return names


def component_grid(base: TrackerConfig, components: Sequence[str]) -> list[GridRow]:
    """Every on/off combination of ``components``; unlisted toggles keep ``base``."""
    rows = []
    for flags in itertools.product((False, True), repeat=len(components)):
        changes = {COMPONENTS[c]: on for c, on in zip(components, flags)}
        enabled = [c for c, on in zip(components, flags) if on]
        rows.append(GridRow("+".join(enabled) or "none", base.with_changes(**changes)))
    return rows


def build_grid(
    base: TrackerConfig,
    kappas: Optional[Sequence[float]] = None,
    components: Optional[Sequence[str]] = None,
) -> list[GridRow]:
    rows = component_grid(base, components) if components else [GridRow("config", base)]
    if not kappas:
        return rows
    return [
        GridRow(row.label, row.cfg.with_changes(kappa=k))
        for row in rows
        for k in kappas
    ]


# ── Scoring ────────────────────────────────────────────

def as_annotations(results: Sequence[FrameResult]) -> dict[int, list[Annotation]]:
    return {
        r.frame: [Annotation(r.frame, o.track_id, o.box, o.conf) for o in r.outputs]
        for r in results
        if r.outputs
    }


def score(bundle: SequenceBundle, cfg: TrackerConfig) -> EvalReport:
    """Track ``bundle`` with ``cfg`` and evaluate against its ground truth."""
    if bundle.ground_truth is None:
        raise ValueError(f"{bundle.name}: no ground truth to score against")
    results = track_sequence(bundle, cfg)
    return metrics.evaluate(bundle.ground_truth, as_annotations(results), bundle.name)


def scenario_bundles(kind: str, seeds: Sequence[int]) -> list[SequenceBundle]:
    bundles = []
    for seed in seeds:
        gt, dets = generate(make_scenario(kind, seed))
        bundles.append(replace(dets, ground_truth=gt.ground_truth))
    return bundles


def score_row(row: GridRow, bundles: Sequence[SequenceBundle]) -> EvalReport:
    report = metrics.aggregate([score(b, row.cfg) for b in bundles], name=row.label)
    log.info(
        "%s (kappa=%.2f): MOTA %.4f IDF1 %.4f IDSW %d",
        row.label, row.cfg.kappa, report.mota, report.idf1, report.idsw,
    )
    return report


def table(rows: Sequence[GridRow], reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "config": row.label, "kappa": row.cfg.kappa, "MOTA": r.mota, "IDF1": r.idf1,
                "IDSW": r.idsw, "FP": r.fp, "FN": r.fn,
            }
            for row, r in zip(rows, reports)
        ],
        columns=TABLE_COLUMNS,
    )
