"""DeconfuseTrack command line.

    python main.py track --det det.txt [--emb emb.csv] [--config c.cfg] --out results.txt
    python main.py eval --results results.txt --gt gt.txt [--csv report.csv]
    python main.py synth crossing --seed 42 --out synth/crossing-42
    python main.py ablate --kappa 0.1,0.2,0.3,0.4,0.5 [--kind crossing --seeds 0-9]
    python main.py ablate --components ddm,tdm,adm [--det det.txt --emb emb.csv --gt gt.txt]

Several ``--det`` (or ``--results``/``--gt``) pairs may be given; each
sequence runs in its own worker thread. Set ``DECONFUSE_LOG=DEBUG`` for
per-frame association logs on stderr.
"""
from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from core import ablation, metrics, monitoring, storage
from core.models import RunManifest, SequenceBundle, TrackerConfig
from core.synth import make_scenario, write_scenario
from core.tracker import run_sequence

log = logging.getLogger("deconfuse")


def configure_logging() -> None:
    raw = os.environ.get("DECONFUSE_LOG", "INFO").strip().upper()
    level = logging.getLevelName(raw)
    known = isinstance(level, int)
    logging.basicConfig(
        level=level if known else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    if not known:
        log.warning("Unknown DECONFUSE_LOG level %r, using INFO", raw)


# ── Argument parsing ───────────────────────────────────

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="tracker config file (key = value lines)")
    p.add_argument("--kappa", type=float, help="confusion reduction factor")
    p.add_argument("--baseline", action="store_true", help="disable ONMS and all DDA modules")
    for name in ("onms", "ddm", "tdm", "adm"):
        p.add_argument(f"--no-{name}", action="store_true", help=f"disable {name.upper()}")
    p.add_argument(
        "--no-second-stage", action="store_true",
        help="skip the second association with unreliable detections",
    )


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="DeconfuseTrack - multi-object tracking with decomposed data association")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run the tracker on MOT detection files")
    p.add_argument("--det", type=Path, action="append", required=True, help="detection file (repeatable)")
    p.add_argument("--emb", type=Path, action="append", default=[], help="embedding CSV, one per --det")
    p.add_argument("--out", type=Path, required=True, help="result file, or a directory for several --det")
    _add_config_flags(p)
    p.set_defaults(handler=_run_track)

    p = sub.add_parser("eval", help="score result files against ground truth")
    p.add_argument("--results", type=Path, action="append", required=True, help="result file (repeatable)")
    p.add_argument("--gt", type=Path, action="append", required=True, help="ground truth, one per --results")
    p.add_argument("--csv", type=Path, help="also write the report as CSV")
    p.set_defaults(handler=_run_eval)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("kind", help="crossing, occlusion or fragmentation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="output directory (default synth/<kind>-<seed>)")
    p.set_defaults(handler=_run_synth)

    p = sub.add_parser("ablate", help="compare tracker configurations")
    p.add_argument("--kappa", dest="kappas", help="comma-separated κ values to sweep")
    p.add_argument("--components", help="components to toggle: onms, ddm, tdm, adm, byte")
    p.add_argument("--kind", default="crossing", help="synthetic scenario kind (default crossing)")
    p.add_argument("--seeds", default="0-9", help="scenario seeds, e.g. 0-9 or 1,5,7")
    p.add_argument("--det", type=Path, help="score a detection file instead of scenarios")
    p.add_argument("--emb", type=Path, help="embedding CSV for --det")
    p.add_argument("--gt", type=Path, help="ground truth for --det")
    p.add_argument("--csv", type=Path, help="also write the table as CSV")
    p.add_argument("--config", type=Path, help="base tracker config file")
    p.set_defaults(handler=_run_ablate)

    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    out: dict[str, object] = {}
    if args.baseline:
        out.update(use_onms=False, use_ddm=False, use_tdm=False, use_adm=False)
    for name in ("onms", "ddm", "tdm", "adm"):
        if getattr(args, f"no_{name}"):
            out[f"use_{name}"] = False
    if args.no_second_stage:
        out["use_second_stage"] = False
    if args.kappa is not None:
        out["kappa"] = args.kappa
    return out


def resolve_config(manifest: RunManifest) -> TrackerConfig:
    return storage.read_config(manifest.config_path).with_changes(**manifest.overrides)


def sequence_name(path: Path) -> str:
    """MOT layouts keep every sequence in ``<seq>/det/det.txt``; name it after ``<seq>``."""
    for part in (path.stem, *(p.name for p in path.parents)):
        if part and part not in ("det", "gt"):
            return part
    return path.stem


def load_sequence(det_path: Path, emb_path: Optional[Path], cfg: TrackerConfig) -> SequenceBundle:
    bundle = storage.read_det(det_path, sequence_name(det_path))
    needs_appearance = cfg.use_tdm or cfg.use_adm
    if emb_path is not None and emb_path.is_file():
        return storage.read_embeddings(emb_path, bundle)
    if emb_path is not None:
        log.warning("%s: embedding file %s not found; TDM/ADM will leave assignments unchanged", bundle.name, emb_path)
    elif needs_appearance:
        log.warning("%s: no embeddings given; TDM/ADM will leave assignments unchanged", bundle.name)
    return bundle


# ── track ──────────────────────────────────────────────

def _track_file(det_path: Path, emb_path: Optional[Path], out_path: Path, cfg: TrackerConfig) -> dict:
    started = time.perf_counter()
    bundle = load_sequence(det_path, emb_path, cfg)
    tracker = run_sequence(bundle, cfg)
    results = tracker.finalize()
    storage.write_results(out_path, results)
    written = storage.read_tracks(out_path)
    rows = sum(len(v) for v in written.values())
    expected = sum(len(r.outputs) for r in results)
    if rows != expected:
        raise ValueError(f"{out_path}: wrote {expected} rows but read back {rows}")
    return {
        "name": bundle.name,
        "frames": len(results),
        "created": tracker.created,
        "ids": len({a.track_id for v in written.values() for a in v}),
        "rows": rows,
        "out": out_path,
        "seconds": time.perf_counter() - started,
    }


async def cmd_track(manifest: RunManifest) -> int:
    manifest.validate()
    cfg = resolve_config(manifest)
    emb_paths = manifest.emb_paths or [None] * len(manifest.det_paths)

    if len(manifest.det_paths) == 1 and not manifest.out_path.is_dir():
        out_paths = [manifest.out_path]
    else:
        manifest.out_path.mkdir(parents=True, exist_ok=True)
        names = [sequence_name(p) for p in manifest.det_paths]
        if len(set(names)) != len(names):
            raise ValueError(f"sequence names collide: {', '.join(names)}")
        out_paths = [manifest.out_path / f"{n}.txt" for n in names]

    summaries = await asyncio.gather(*(
        asyncio.to_thread(_track_file, det, emb, out, cfg)
        for det, emb, out in zip(manifest.det_paths, emb_paths, out_paths)
    ))
    for s in summaries:
        print(
            f"{s['name']}: {s['frames']} frames, {s['created']} tracks created, "
            f"{s['ids']} ids, {s['rows']} rows -> {s['out']} ({s['seconds']:.2f}s)"
        )
    return 0


async def _run_track(args: argparse.Namespace) -> int:
    manifest = RunManifest(
        det_paths=args.det,
        out_path=args.out,
        emb_paths=args.emb,
        config_path=args.config,
        overrides=_overrides(args),
    )
    return await cmd_track(manifest)


# ── eval ───────────────────────────────────────────────

def _eval_pair(results_path: Path, gt_path: Path):
    gt = storage.read_gt(gt_path)
    preds = storage.read_tracks(results_path)
    return metrics.evaluate(gt, preds, sequence_name(gt_path))


async def cmd_eval(results: Sequence[Path], gt: Sequence[Path], csv: Optional[Path] = None) -> int:
    if len(results) != len(gt):
        raise ValueError("give one --gt per --results")
    reports = await asyncio.gather(*(
        asyncio.to_thread(_eval_pair, r, g) for r, g in zip(results, gt)
    ))
    rows = list(reports)
    if len(rows) > 1:
        rows.append(metrics.aggregate(rows))
    df = metrics.report_frame(rows)
    print(metrics.render_table(df))
    if csv is not None:
        metrics.write_csv(df, csv)
    return 0


async def _run_eval(args: argparse.Namespace) -> int:
    return await cmd_eval(args.results, args.gt, args.csv)


# ── synth ──────────────────────────────────────────────

async def cmd_synth(kind: str, seed: int, out_dir: Optional[Path] = None) -> int:
    scenario = make_scenario(kind, seed)
    paths = write_scenario(scenario, out_dir or Path("synth") / scenario.name)
    for label, path in paths.items():
        print(f"{label}: {path}")
    return 0


async def _run_synth(args: argparse.Namespace) -> int:
    return await cmd_synth(args.kind, args.seed, args.out)


# ── ablate ─────────────────────────────────────────────

async def cmd_ablate(
    manifest: RunManifest,
    kappas: Optional[Sequence[float]] = None,
    components: Optional[Sequence[str]] = None,
    kind: str = "crossing",
    seeds: Sequence[int] = (0,),
    gt_path: Optional[Path] = None,
    csv: Optional[Path] = None,
) -> int:
    manifest.validate()
    base = resolve_config(manifest)
    rows = ablation.build_grid(base, kappas, components)

    if manifest.det_paths:
        if gt_path is None:
            raise ValueError("--det needs --gt")
        emb = manifest.emb_paths[0] if manifest.emb_paths else None
        bundle = load_sequence(manifest.det_paths[0], emb, base)
        bundles = [replace(bundle, ground_truth=storage.read_gt(gt_path))]
    else:
        bundles = await asyncio.to_thread(ablation.scenario_bundles, kind, seeds)

    reports = await asyncio.gather(*(
        asyncio.to_thread(ablation.score_row, row, bundles) for row in rows
    ))
    df = ablation.table(rows, reports)
    print(metrics.render_table(df))
    if csv is not None:
        metrics.write_csv(df, csv)
    return 0


async def _run_ablate(args: argparse.Namespace) -> int:
    manifest = RunManifest(
        det_paths=[args.det] if args.det else [],
        out_path=args.csv or Path("."),
        emb_paths=[args.emb] if args.det and args.emb else [],
        config_path=args.config,
    )
    return await cmd_ablate(
        manifest,
        kappas=ablation.parse_floats(args.kappas) if args.kappas else None,
        components=ablation.parse_components(args.components) if args.components else None,
        kind=args.kind,
        seeds=ablation.parse_ints(args.seeds),
        gt_path=args.gt,
        csv=args.csv,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging()
    monitoring.init_sentry(args.command)
    try:
        return asyncio.run(args.handler(args))
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        monitoring.capture_exception(e)
        raise
    finally:
        monitoring.flush()


if __name__ == "__main__":
    sys.exit(main())
