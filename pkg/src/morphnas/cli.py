"""Command-line entry points: search, enumerate, count-space, finalize, retrain, export-dot."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .batching import OutOfBudgetError
from .cell import CellGraph, count_configurations, finalize, read_cell, to_dot, write_cell
from .checkpoint import CheckpointError, load_checkpoint
from .config import OUTPUT_ROOT_ENV, SCHEMA_HELP, ConfigError, RunConfig, build_config
from .data import (
    DataFormatError, LabeledImageSet, load_cifar10_binary, split_half, stratified_split, synthetic_dataset,
)
from .retrain import CellMismatchError, retrain, train_baseline
from .search import checkpoint_path, run_search
from .space import PRESETS, preset_report

log = logging.getLogger("morphnas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

CONFIG_SNAPSHOT = "config.txt"
FINAL_DIR = "final"
NINE_POINT_THREE_NOTE = (
    "note: M=4, K=8 evaluates to 3,019,898,880 (about 3.0e9) under the closed-form product; "
    "the figure of 9.3e9 sometimes quoted for this case does not follow from it, while the 4.6e11 "
    "figure for K=15 and the ~153x ratio are consistent with 3.0e9")


# ---------------------------------------------------------------- data

def load_datasets(config: RunConfig) -> tuple[LabeledImageSet, LabeledImageSet]:
    """(train, test) for the configured source."""
    if config.dataset == "cifar10":
        root = Path(config.data_path)
        train_files = sorted(root.glob("data_batch_*.bin"))
        test_file = root / "test_batch.bin"
        if not train_files or not test_file.is_file():
            raise DataFormatError(f"{root}: expected data_batch_*.bin and test_batch.bin")
        return load_cifar10_binary(train_files), load_cifar10_binary(test_file)
    data = synthetic_dataset(config.synthetic_classes, config.synthetic_samples, config.image_size, config.seed)
    return stratified_split(data, config.test_fraction, config.seed)


def search_halves(config: RunConfig, train: LabeledImageSet) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Weight half and alpha half drawn from (a subset of) the training split."""
    if 0 < config.search_samples < len(train):
        _, train = stratified_split(train, config.search_samples / len(train), config.seed)
    return split_half(train, config.seed)


# ---------------------------------------------------------------- commands

def cmd_search(config: RunConfig, resume: bool = False, progress=None, stop_after: Optional[int] = None) -> Path:
    run_dir = config.run_dir("search")
    if not resume and checkpoint_path(run_dir).exists():
        raise ConfigError(f"output_dir: {run_dir} already holds a run (pass --resume to continue it)")
    train, _ = load_datasets(config)
    weight_half, alpha_half = search_halves(config, train)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_SNAPSHOT).write_text(config.to_text())
    result = run_search(config.search_config(), weight_half, alpha_half, run_dir, resume, progress, stop_after)
    if result.normal is not None:
        write_final(run_dir, result.normal, result.reduction)
    return run_dir


def write_final(run_dir, normal: CellGraph, reduction: CellGraph) -> list[Path]:
    paths = []
    for cell in (normal, reduction):
        paths.extend(write_cell(cell, Path(run_dir) / FINAL_DIR, cell.kind))
    return paths


def cmd_finalize(run_dir) -> list[Path]:
    """Finalize from the latest checkpoint (the pre-prune pools once the schedule has completed)."""
    payload, _ = load_checkpoint(checkpoint_path(run_dir))
    try:
        if payload.get("finalized"):
            normal, reduction = (CellGraph.from_dict(c) for c in payload["finalized"])
        else:
            source = payload.get("final_alphas") or payload
            normal, reduction = finalize(CellGraph.from_dict(source["normal"]),
                                         CellGraph.from_dict(source["reduction"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{run_dir}: checkpoint holds no usable cells ({exc})") from exc
    return write_final(run_dir, normal, reduction)


def load_cells(source) -> tuple[CellGraph, CellGraph]:
    """Finalized cells from a run directory, its final/ directory, or a directory of cell JSON files."""
    source = Path(source)
    for base in (source / FINAL_DIR, source):
        if (base / "normal.json").is_file() and (base / "reduction.json").is_file():
            try:
                return read_cell(base / "normal.json"), read_cell(base / "reduction.json")
            except (KeyError, ValueError) as exc:
                raise DataFormatError(f"{base}: unreadable cell export ({exc})") from exc
    raise DataFormatError(f"{source}: no normal.json/reduction.json found")


def cmd_retrain(normal: CellGraph, reduction: CellGraph, config: RunConfig, baseline: bool = False,
                progress=None) -> dict:
    train, test = load_datasets(config)
    rc = config.retrain_config()
    report = retrain(normal, reduction, train, test, rc, progress)
    out = {"test_acc": report.test_acc, "train_acc": report.train_acc, "parameters": report.parameters,
           "cells": rc.cells, "init_channels": rc.init_channels, "epochs": rc.epochs}
    if baseline:
        out["baseline_test_acc"] = train_baseline(train, test, rc).test_acc
    return out


def cmd_enumerate(preset: str, budget: Optional[int] = None) -> dict:
    return preset_report(preset.upper(), budget)


def cmd_count_space(nodes: int, candidates: Sequence[int]) -> dict:
    counts = {k: count_configurations(nodes, k) for k in candidates}
    out = {"nodes": nodes, "counts": counts}
    if len(candidates) == 2:
        out["ratio"] = counts[candidates[0]] / counts[candidates[1]]
    return out


def cmd_export_dot(cell_json, output=None) -> str:
    try:
        dot = to_dot(read_cell(cell_json))
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{cell_json}: unreadable cell export ({exc})") from exc
    if output is not None:
        Path(output).write_text(dot)
    return dot


# ---------------------------------------------------------------- argument parsing

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    group = parser.add_argument_group("configuration keys (override the file)")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="VALUE",
                           help=SCHEMA_HELP.get(f.name))


def _config_from_args(args, base_file: Optional[str] = None) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for f in fields(RunConfig):
        value = getattr(args, "cfg_" + f.name)
        if value is not None:
            overrides[f.name] = value
    return build_config(args.config or base_file, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphnas", description="Prune-and-replace differentiable cell search on numpy.",
        epilog=f"Default output root: ${OUTPUT_ROOT_ENV} (else ./runs).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the cyclic search and finalize the cells")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the run directory's latest checkpoint")

    p = sub.add_parser("enumerate", help="list the conv specs reachable from the 3x3 root")
    p.add_argument("--preset", default="DL", type=str.upper, choices=sorted(PRESETS))
    p.add_argument("--budget", type=int, default=None, help="morph-step budget (default: the preset's)")
    p.add_argument("--list", action="store_true", help="print every canonical spec string")

    p = sub.add_parser("count-space", help="count finalized cell configurations")
    p.add_argument("nodes", type=int, help="intermediate nodes M")
    p.add_argument("candidates", type=int, nargs="+", help="candidates K (two values print their ratio)")

    p = sub.add_parser("finalize", help="write finalized cells from a run directory's checkpoint")
    p.add_argument("run_dir")

    p = sub.add_parser("retrain", help="train the evaluation network built from finalized cells")
    p.add_argument("cells", help="run directory or directory holding normal.json and reduction.json")
    _add_config_flags(p)
    p.add_argument("--baseline", action="store_true", help="also train the fixed two-layer conv baseline")
    p.add_argument("--report", help="write the accuracy report as JSON here")

    p = sub.add_parser("export-dot", help="render a cell JSON export as Graphviz dot")
    p.add_argument("cell_json")
    p.add_argument("-o", "--output", help="write here instead of stdout")
    return parser


def _run(args) -> int:
    progress = (lambda msg: log.info(msg)) if args.verbose else None
    if args.command == "search":
        base = None
        if args.resume:
            probe = _config_from_args(args)
            snapshot = probe.run_dir("search") / CONFIG_SNAPSHOT
            base = str(snapshot) if snapshot.is_file() and not args.config else None
        config = _config_from_args(args, base)
        run_dir = cmd_search(config, args.resume, progress)
        final = run_dir / FINAL_DIR
        print(f"run directory: {run_dir}")
        for kind in ("normal", "reduction"):
            cell = read_cell(final / f"{kind}.json")
            ops = ", ".join(f"{e}:{p.candidates[0].canonical()}" for e, p in sorted(cell.edges.items()))
            print(f"{kind}: {ops}")
    elif args.command == "enumerate":
        report = cmd_enumerate(args.preset, args.budget)
        print(f"preset {report['preset']}, budget {report['budget']}, reference total {report['reference_total']}")
        for semantics, count in report["counts"].items():
            print(f"  {semantics}: {count}")
            if args.list:
                for spec in report["specs"][semantics]:
                    print(f"    {spec}")
    elif args.command == "count-space":
        report = cmd_count_space(args.nodes, args.candidates)
        for k, count in report["counts"].items():
            print(f"M={args.nodes} K={k}: {count:,}")
        if "ratio" in report:
            a, b = args.candidates
            print(f"ratio K={a} / K={b}: {report['ratio']:.6f}")
        if args.nodes == 4 and 8 in args.candidates:
            print(NINE_POINT_THREE_NOTE)
    elif args.command == "finalize":
        for path in cmd_finalize(args.run_dir):
            print(path)
    elif args.command == "retrain":
        config = _config_from_args(args)
        normal, reduction = load_cells(args.cells)
        report = cmd_retrain(normal, reduction, config, args.baseline, progress)
        print(f"test accuracy: {report['test_acc']:.4f} ({report['parameters']:,} parameters)")
        if "baseline_test_acc" in report:
            print(f"baseline test accuracy: {report['baseline_test_acc']:.4f}")
        if args.report:
            Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    elif args.command == "export-dot":
        dot = cmd_export_dot(args.cell_json, args.output)
        if args.output is None:
            sys.stdout.write(dot)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, CheckpointError, CellMismatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OutOfBudgetError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
