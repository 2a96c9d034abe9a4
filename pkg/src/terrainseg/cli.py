"""Command-line entry points.

Subcommands: ingest, compose, subsample, train, eval, sweep, plot, table.
Exit codes: 0 success, 2 configuration error, 3 partial cell failure.
Paths in config files may use ``${TERRAINSEG_DATA_ROOT}``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import expconfig
from .composition import CompositionSpec, LabelFractionSpec, compose_mixed, sample_label_fraction
from .errors import ConfigError, TerrainSegError
from .experiment import emit_table, load_sweep, run_grid
from .ingest import read_manifest, scan_dataset, write_manifest
from .metrics import load_report
from .models import build_model
from .plots import PlotKind, plot_confusion_heatmap, plot_sweep
from .taxonomy import Domain, Split, make_taxonomy
from .train import Checkpoint, evaluate, finetune, seed_everything

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _cmd_ingest(args) -> int:
    report = scan_dataset(args.root, Domain(args.domain.upper()), Split(args.split.upper()))
    write_manifest(report.manifest, args.out)
    n = len(report.manifest)
    print(f"wrote {args.out}: {n} entries", end="")
    if report.expected_count is not None:
        print(f" (expected {report.expected_count})", end="")
    print()
    for stem in report.missing_mask:
        print(f"MISSING_MASK: {stem}", file=sys.stderr)
    for stem in report.missing_image:
        print(f"MISSING_IMAGE: {stem}", file=sys.stderr)
    return EXIT_OK


def _cmd_compose(args) -> int:
    manifest = compose_mixed(CompositionSpec(
        cap=args.cap,
        m2020_proportion=args.m2020_prop,
        seed=args.seed,
        source_msl=read_manifest(args.msl),
        source_m2020=read_manifest(args.m2020),
    ))
    write_manifest(manifest, args.out)
    counts = manifest.domain_counts()
    print(f"wrote {args.out}: {len(manifest)} entries "
          f"({counts[Domain.MSL]} MSL + {counts[Domain.M2020]} M2020), "
          f"hash {manifest.content_hash[:12]}")
    return EXIT_OK


def _cmd_subsample(args) -> int:
    manifest = sample_label_fraction(LabelFractionSpec(
        fraction=args.fraction,
        seed=args.seed,
        source_msl=read_manifest(args.msl),
        source_m2020=read_manifest(args.m2020),
    ))
    write_manifest(manifest, args.out)
    counts = manifest.domain_counts()
    print(f"wrote {args.out}: {len(manifest)} entries "
          f"({counts[Domain.MSL]} MSL + {counts[Domain.M2020]} M2020)")
    return EXIT_OK


def _cmd_train(args) -> int:
    grid = expconfig.load_grid(args.config, output_dir=args.out)
    if grid.axes:
        raise ConfigError("config declares sweep axes; use the sweep subcommand")
    if grid.data.train is None:
        raise ConfigError("train subcommand needs data.train in the config")
    config = grid.base
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config = replace(config, checkpoint_dir=str(Path(grid.output_dir) / "checkpoints"))
    seed_everything(config.seed)
    model = build_model(grid.backbone, config.taxonomy)
    result = finetune(model, read_manifest(grid.data.train), config)
    history_path = Path(grid.output_dir) / "history.json"
    history_path.parent.mkdir(parents=True, exist_ok=True)
    history_path.write_text(json.dumps(result.history, indent=2))
    print(f"trained {config.epochs} epochs; history at {history_path}")
    if result.last_checkpoint_path:
        print(f"last checkpoint: {result.last_checkpoint_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    taxonomy = make_taxonomy("FOUR_CLASS" if checkpoint.num_classes == 4 else "SIX_CLASS")
    report = evaluate(checkpoint, read_manifest(args.test), taxonomy)
    out = Path(args.out or "eval_report.json")
    report.save(out, class_names=taxonomy.classes)
    print(f"accuracy={report.accuracy:.4f} f1_macro={report.f1_macro:.4f} "
          f"miou={report.miou:.4f} -> {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    grid = expconfig.validate_config(args.config)
    if args.out:
        grid = replace(grid, output_dir=args.out)
    print(f"config ok: {len(grid.cells())} cells")
    if args.validate_only:
        return EXIT_OK
    result = run_grid(grid, workers=args.workers)
    ok = sum(1 for c in result.cells if c.status != "failed")
    print(f"{ok}/{len(result.cells)} cells completed; summary at "
          f"{Path(grid.output_dir) / 'summary.json'}")
    for c in result.failed:
        print(f"FAILED {c.cell.settings}: {c.error}", file=sys.stderr)
    return EXIT_PARTIAL if result.failed else EXIT_OK


def _cmd_plot(args) -> int:
    kind = PlotKind(args.kind.upper())
    out_dir = Path(args.out or "plots")
    if kind is PlotKind.CONFUSION_HEATMAP:
        report = load_report(args.report)
        taxonomy = make_taxonomy(
            "FOUR_CLASS" if report.confusion.num_classes == 4 else "SIX_CLASS")
        path = plot_confusion_heatmap(report.confusion, taxonomy.classes,
                                      out_dir / "confusion_heatmap.png")
        print(f"wrote {path}")
        return EXIT_OK
    result = load_sweep(args.sweep_dir)
    paths = plot_sweep(result, kind, out_dir)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_table(args) -> int:
    result = load_sweep(args.sweep_dir)
    print(emit_table(result, fmt=args.format, test_set=args.test_set))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="terrainseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a dataset tree into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--domain", required=True, choices=["msl", "m2020"])
    p.add_argument("--split", required=True, choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("compose", help="build a capped mixed-domain training manifest")
    p.add_argument("--cap", type=int, required=True)
    p.add_argument("--m2020-prop", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--msl", required=True)
    p.add_argument("--m2020", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("subsample", help="stratified limited-label subset")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--msl", required=True)
    p.add_argument("--m2020", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_subsample)

    p = sub.add_parser("train", help="finetune per a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run (or validate) an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--validate-only", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="render sweep curves or heatmaps")
    p.add_argument("--kind", required=True,
                   choices=[k.value.lower() for k in PlotKind])
    p.add_argument("--sweep-dir")
    p.add_argument("--report")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("table", help="aggregate table from a sweep directory")
    p.add_argument("--sweep-dir", required=True)
    p.add_argument("--format", default="markdown", choices=["markdown", "tsv"])
    p.add_argument("--test-set")
    p.set_defaults(func=_cmd_table)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TerrainSegError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
