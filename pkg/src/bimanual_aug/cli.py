"""Command-line entry point: ``bimanual-aug {synth,retarget,crosspaint,validate,stats}``.

Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .dataset import (AUGMENTED_FORMAT, SOURCE_FORMAT, Demonstration, check_balance, load_augmented,
                      load_dataset, load_manifest, provenance_ok)
from .errors import BimanualAugError, ManifestError, SchemaError
from .plots import ee_trace_svg
from .synth import load_script, write_synth_dataset

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("bimanual_aug")

CORRECTION_BINS_MM = [0, 1, 2, 5, 10, 20, 50, np.inf]
EE_ERROR_BINS_PX = [0, 1, 2, 4, 8, 16, np.inf]
IK_ERROR_BINS_M = [0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, np.inf]


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        d = {"level": record.levelname.lower(), "logger": record.name, "event": record.getMessage()}
        d.update(getattr(record, "fields", {}))
        return json.dumps(d, sort_keys=True)


class _TextFormatter(logging.Formatter):
    def format(self, record):
        fields = getattr(record, "fields", {})
        extra = " ".join(f"{k}={v}" for k, v in sorted(fields.items()))
        return f"{record.levelname.lower()}: {record.getMessage()}" + (f" {extra}" if extra else "")


def setup_logging(as_json: bool, verbose: bool = False):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if as_json else _TextFormatter())
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def _default_jobs():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# --------------------------------------------------------------------------- commands

def _pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    script = load_script(args.script)
    if args.seed is not None:
        script.seed = args.seed
    m = write_synth_dataset(script, args.out)
    log.info("synth_done", extra={"fields": {"demos": len(m["demos"]), "out": str(args.out)}})
    return EXIT_OK


def cmd_retarget(args) -> int:
    from .pipeline import run_retarget

    cfg = _pipeline_config(args)
    res = run_retarget(args.in_dir, args.out, cfg, jobs=args.jobs)
    corr = [c for d in res["demos"] for c in d["correction_m"] if c is not None]
    if corr:
        log.info("retarget_correction", extra={"fields": {"median_m": float(np.median(corr)),
                                                           "max_m": float(np.max(corr))}})
    return EXIT_OK


def cmd_crosspaint(args) -> int:
    from .pipeline import run_crosspaint

    cfg = _pipeline_config(args)
    run_crosspaint(args.in_dir, args.target_robot, args.out, cfg, jobs=args.jobs)
    return EXIT_OK


def validate_dataset(root) -> dict:
    """Schema and invariant checks; raises SchemaError/ManifestError on the first violation."""
    root = Path(root)
    m = load_manifest(root)
    fmt = m.get("format")
    if fmt == SOURCE_FORMAT:
        demos = load_dataset(root)
        for key, r in (m.get("robots") or {}).items():
            if not (root / r.get("urdf", "")).is_file():
                raise SchemaError(f"robot {key!r} URDF {r.get('urdf')!r} missing", locus="manifest.json")
        for plate in (m.get("plates") or {}).values():
            for rel in plate.values():
                if rel and not (root / rel).is_file():
                    raise SchemaError(f"plate image {rel!r} missing", locus="manifest.json")
    elif fmt == AUGMENTED_FORMAT:
        demos = load_augmented(root)
        mode = m.get("provenance_mode", "mixed")
        total = 0
        for e, d in zip(m["demos"], demos):
            if e.get("drop_count", len(d.dropped_frames)) != len(d.dropped_frames):
                raise SchemaError("drop_count disagrees with dropped_frames", locus=f"manifest.json:{d.id}")
            total += len(d.dropped_frames)
            for fr in d.frames:
                if not provenance_ok(fr, mode):
                    raise SchemaError("provenance invariant violated",
                                      locus=f"{d.id}/frames.jsonl:frame {fr.index}")
        if m.get("total_dropped_frames", total) != total:
            raise SchemaError("total_dropped_frames disagrees with per-demo drops", locus="manifest.json")
    else:
        raise ManifestError(f"{root}: unknown dataset format {fmt!r}")
    for e, d in zip(m["demos"], demos):
        for fr in d.frames:
            for cam, paths in fr.observations.items():
                for rel in paths.values():
                    if rel and not (root / e.get("path", d.id) / rel).is_file():
                        raise SchemaError(f"camera {cam!r} image {rel!r} missing",
                                          locus=f"{d.id}/frames.jsonl:frame {fr.index}")
    return {"format": fmt, "demos": len(demos), "frames": sum(len(d.frames) for d in demos)}


def cmd_validate(args) -> int:
    try:
        info = validate_dataset(args.in_dir)
    except (SchemaError, ManifestError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {info['format']} with {info['demos']} demos, {info['frames']} frames")
    return EXIT_OK


def _histogram(values, bins):
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    counts, _ = np.histogram(v, bins=np.asarray(bins, dtype=np.float64))
    labels = [f"[{lo:g},{hi:g})" for lo, hi in zip(bins[:-1], bins[1:])]
    return {"n": int(v.size), "bins": dict(zip(labels, counts.tolist()))}


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def dataset_stats(root) -> dict:
    root = Path(root)
    m = load_manifest(root)
    fmt = m.get("format")
    demos = load_augmented(root) if fmt == AUGMENTED_FORMAT else load_dataset(root)
    tasks = {}
    for d in demos:
        t = tasks.setdefault(d.task, {"demos": 0, "frames": 0})
        t["demos"] += 1
        t["frames"] += len(d.frames)
    balance = check_balance(demos)
    split = {task: f"{c['left']}/{c['right']}" for task, c in balance.counts.items()}
    out = {"format": fmt, "demos": len(demos), "frames": sum(len(d.frames) for d in demos), "tasks": tasks,
           "balance": balance.to_dict(), "split": split, "fidelity": {}}
    corrections, low, ee_err, ik_err, dropped = [], 0, [], [], 0
    for e, d in zip(m["demos"], demos):
        ddir = root / e.get("path", d.id)
        rf = ddir / "retarget_fidelity.json"
        if rf.is_file():
            r = _read_json(rf)
            low += int(r.get("low_fidelity_frames", 0))
            corrections += [None if x.get("correction_m") is None else 1000.0 * x["correction_m"]
                            for x in r.get("frames", [])]
        cf = ddir / "fidelity.json"
        if cf.is_file():
            c = _read_json(cf)
            dropped += len(c.get("dropped", []))
            for x in c.get("frames", []):
                ee_err += [v.get("error_px") for v in x.get("ee", {}).values()]
                ik_err += [v.get("pos_error") for v in x.get("ik", {}).values()]
    if corrections:
        out["fidelity"]["retarget"] = {"low_fidelity_frames": low,
                                       "correction_mm": _histogram(corrections, CORRECTION_BINS_MM)}
    if ee_err:
        out["fidelity"]["crosspaint"] = {"dropped_frames": dropped,
                                         "ee_centroid_error_px": _histogram(ee_err, EE_ERROR_BINS_PX),
                                         "ik_pos_error_m": _histogram(ik_err, IK_ERROR_BINS_M)}
    return out


def ee_traces(demo) -> dict:
    if isinstance(demo, Demonstration):
        traces = {"robot": [fr.robot_state.pose.translation for fr in demo.frames]}
        human = [fr.human_action.pose.translation for fr in demo.frames if fr.human_action is not None]
        if human:
            traces["human"] = human
        return traces
    return {"left": [fr.left_state.pose.translation for fr in demo.frames],
            "right": [fr.right_state.pose.translation for fr in demo.frames]}


def cmd_stats(args) -> int:
    try:
        st = dataset_stats(args.in_dir)
    except (SchemaError, ManifestError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.svg:
        root = Path(args.in_dir)
        fmt = load_manifest(root).get("format")
        demos = load_augmented(root) if fmt == AUGMENTED_FORMAT else load_dataset(root)
        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for d in demos:
            (svg_dir / f"{d.id}_ee.svg").write_text(ee_trace_svg(ee_traces(d), f"{d.id} ({d.task})"))
        st["svg"] = str(svg_dir)
    print(json.dumps(st, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bimanual-aug",
                                description="Build bimanual robot datasets from robot + human demonstrations.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-json", action="store_true", help="line-delimited JSON logs on stderr")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if config:
            sp.add_argument("--config", default=None, help="pipeline config JSON")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="config override, e.g. retarget.threshold=0.3 (repeatable)")
            sp.add_argument("--jobs", type=int, default=_default_jobs(),
                            help="parallel trajectory workers (default: available cores)")

    s = sub.add_parser("synth", help="generate a synthetic source dataset with ground truth")
    s.add_argument("--script", required=True)
    s.add_argument("--out", required=True)
    common(s, config=False)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("retarget", help="refine hand keypoints and fill human actions")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_retarget)

    s = sub.add_parser("crosspaint", help="paint the target robot and export the bimanual dataset")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--target-robot", required=True, help="robot config JSON or builtin name")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_crosspaint)

    s = sub.add_parser("validate", help="schema and invariant checks")
    s.add_argument("--in", dest="in_dir", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="counts, side balance, fidelity histograms")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--svg", default=None, help="directory for per-demo EE trace plots")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_json, args.verbose)
    try:
        return args.func(args)
    except (SchemaError, ManifestError) as exc:
        log.error("invalid_input", extra={"fields": {"error": str(exc), "type": type(exc).__name__}})
        return EXIT_INVALID
    except (OSError, ValueError, BimanualAugError) as exc:
        log.error("failed", extra={"fields": {"error": str(exc), "type": type(exc).__name__}})
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
