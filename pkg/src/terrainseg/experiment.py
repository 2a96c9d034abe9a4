"""Experiment grids: cartesian sweeps over composition, loss, backbone, and
seed axes, with resumable per-cell execution and seed-aggregated summaries.

Every number that reaches a table or plot is first persisted as a per-cell
report file under ``output_dir/cells/<digest>/``; aggregates are recomputed
from those files on demand, so a sweep can be analyzed or resumed without
re-running anything.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats as scipy_stats

from .composition import CompositionSpec, LabelFractionSpec, compose_mixed, sample_label_fraction
from .errors import ConfigError, TerrainSegError
from .ingest import DatasetManifest, read_manifest
from .losses import LossKind
from .models import BackboneFamily, BackboneSpec, PretrainSource, build_model
from .train import TrainConfig, evaluate, finetune, seed_everything

AXIS_NAMES = (
    "m2020_proportion",
    "seed",
    "label_fraction",
    "loss_kind",
    "backbone_family",
    "pretrain_source",
)

METRIC_KEYS = ("accuracy", "f1_macro", "miou")


@dataclass(frozen=True)
class GridData:
    """Manifest paths feeding a grid; composition axes need both sources."""

    msl_train: Optional[str] = None
    m2020_train: Optional[str] = None
    train: Optional[str] = None          # fixed train manifest (no composition axis)
    tests: dict = field(default_factory=dict)   # name -> manifest path


@dataclass(frozen=True)
class ExperimentGrid:
    axes: dict
    base: TrainConfig
    data: GridData
    output_dir: str
    cap: Optional[int] = None
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    # (family, pretrain_source) -> weights path, for backbone axes
    weights: dict = field(default_factory=dict)
    exclude: tuple = ()                  # dicts of axis settings to drop

    def __post_init__(self):
        unknown = set(self.axes) - set(AXIS_NAMES)
        if unknown:
            raise ConfigError(f"unknown grid axes: {sorted(unknown)}")
        for name, values in self.axes.items():
            if not values:
                raise ConfigError(f"axis {name!r} is empty")
            if len(set(values)) != len(list(values)):
                raise ConfigError(f"axis {name!r} has duplicate values")
        if "m2020_proportion" in self.axes and "label_fraction" in self.axes:
            raise ConfigError("proportion and label-fraction axes are mutually exclusive")
        if "m2020_proportion" in self.axes and self.cap is None:
            raise ConfigError("proportion axis requires a cap")

    def cells(self) -> list["Cell"]:
        names = [n for n in AXIS_NAMES if n in self.axes]
        out = []
        for combo in product(*(self.axes[n] for n in names)):
            settings = dict(zip(names, combo))
            if any(all(settings.get(k) == v for k, v in ex.items()) for ex in self.exclude):
                continue
            out.append(Cell(settings=settings, digest=self.cell_digest(settings)))
        return out

    def cell_digest(self, settings: dict) -> str:
        payload = {
            "settings": {k: settings[k] for k in sorted(settings)},
            "base": self.base.digest(),
            "cap": self.cap,
            "backbone": (self.backbone.family.value, self.backbone.pretrain_source.value),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Cell:
    settings: dict
    digest: str

    def setting_key(self) -> tuple:
        """Grouping key across seeds: every axis value except the seed."""
        return tuple(sorted((k, v) for k, v in self.settings.items() if k != "seed"))


@dataclass
class CellResult:
    cell: Cell
    status: str                         # ok | failed | skipped-existing
    reports: dict = field(default_factory=dict)   # test set -> metric dict
    error: Optional[str] = None
    report_dir: Optional[str] = None


@dataclass
class SweepResult:
    cells: list[CellResult]
    aggregates: list[dict]
    output_dir: str

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.status == "failed"]


def _confidence_interval(values: list[float]) -> Optional[float]:
    """Half-width of the 95% Student-t interval; None below two samples."""
    n = len(values)
    if n < 2:
        return None
    sem = float(np.std(values, ddof=1) / np.sqrt(n))
    return float(scipy_stats.t.ppf(0.975, n - 1) * sem)


def aggregate_cells(cells: list[CellResult]) -> list[dict]:
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        if c.status in ("ok", "skipped-existing"):
            groups.setdefault(c.cell.setting_key(), []).append(c)
    out = []
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        entry = {"settings": dict(key), "num_seeds": len(members), "metrics": {}}
        test_sets = sorted({name for m in members for name in m.reports})
        for name in test_sets:
            per_metric = {}
            for metric in METRIC_KEYS:
                values = [m.reports[name][metric] for m in members if name in m.reports]
                per_metric[metric] = {
                    "mean": float(np.mean(values)),
                    "ci95": _confidence_interval(values),
                }
            entry["metrics"][name] = per_metric
        out.append(entry)
    return out


def _build_train_manifest(grid: ExperimentGrid, settings: dict, seed: int) -> DatasetManifest:
    if "m2020_proportion" in settings or "label_fraction" in settings:
        msl = read_manifest(grid.data.msl_train)
        if grid.data.m2020_train is not None:
            m2020 = read_manifest(grid.data.m2020_train)
        else:
            # single-domain label-fraction sweeps stratify over MSL alone
            m2020 = DatasetManifest(entries=(), dataset_id="empty_m2020",
                                    taxonomy_variant=msl.taxonomy_variant)
        if "m2020_proportion" in settings:
            return compose_mixed(CompositionSpec(
                cap=grid.cap,
                m2020_proportion=settings["m2020_proportion"],
                seed=seed,
                source_msl=msl,
                source_m2020=m2020,
            ))
        return sample_label_fraction(LabelFractionSpec(
            fraction=settings["label_fraction"],
            seed=seed,
            source_msl=msl,
            source_m2020=m2020,
        ))
    if grid.data.train is None:
        raise ConfigError("grid without composition axes needs data.train")
    return read_manifest(grid.data.train)


def _cell_backbone(grid: ExperimentGrid, settings: dict) -> BackboneSpec:
    family = BackboneFamily(settings.get("backbone_family", grid.backbone.family))
    source = PretrainSource(settings.get("pretrain_source", grid.backbone.pretrain_source))
    weights = grid.weights.get((family.value, source.value), grid.backbone.weights_path)
    return BackboneSpec(family=family, pretrain_source=source, weights_path=weights)


def run_cell(grid: ExperimentGrid, cell: Cell) -> CellResult:
    cell_dir = Path(grid.output_dir) / "cells" / cell.digest
    marker = cell_dir / "cell.json"
    if marker.is_file():
        data = json.loads(marker.read_text())
        return CellResult(
            cell=cell, status="skipped-existing",
            reports=data["reports"], report_dir=str(cell_dir),
        )
    try:
        seed = int(cell.settings.get("seed", grid.base.seed))
        config = replace(grid.base, seed=seed, checkpoint_dir=str(cell_dir / "checkpoints"))
        if "loss_kind" in cell.settings:
            config = replace(config, loss=replace(config.loss, kind=LossKind(cell.settings["loss_kind"])))
        backbone = _cell_backbone(grid, cell.settings)
        manifest = _build_train_manifest(grid, cell.settings, seed)

        seed_everything(seed)
        model = build_model(backbone, config.taxonomy)
        finetune(model, manifest, config)

        reports = {}
        cell_dir.mkdir(parents=True, exist_ok=True)
        for name, path in grid.data.tests.items():
            report = evaluate(model, read_manifest(path), config.taxonomy, config.preprocess,
                              device=config.device)
            report.save(cell_dir / f"report_{name}.json", class_names=config.taxonomy.classes)
            reports[name] = {k: getattr(report, k) for k in METRIC_KEYS}
            reports[name]["per_class_recall"] = [
                None if np.isnan(v) else float(v) for v in report.per_class_recall
            ]
        marker.write_text(json.dumps(
            {"settings": cell.settings, "digest": cell.digest,
             "train_manifest_hash": manifest.content_hash, "reports": reports},
            indent=2, default=str,
        ))
        return CellResult(cell=cell, status="ok", reports=reports, report_dir=str(cell_dir))
    except (TerrainSegError, OSError, ValueError) as exc:
        return CellResult(cell=cell, status="failed", error=f"{type(exc).__name__}: {exc}")


def _run_cell_payload(args) -> CellResult:
    return run_cell(*args)


def run_grid(grid: ExperimentGrid, workers: int = 1) -> SweepResult:
    """Execute every cell (compose -> train -> evaluate), isolating failures,
    then write ``summary.json``. Completed cells are skipped on rerun."""
    cells = grid.cells()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_payload, [(grid, c) for c in cells]))
    else:
        results = [run_cell(grid, c) for c in cells]

    aggregates = aggregate_cells(results)
    result = SweepResult(cells=results, aggregates=aggregates, output_dir=str(grid.output_dir))
    summary = {
        "cells": [
            {"settings": r.cell.settings, "digest": r.cell.digest, "status": r.status,
             "reports": r.reports, "error": r.error}
            for r in results
        ],
        "aggregates": aggregates,
        "failed_cells": [r.cell.digest for r in result.failed],
    }
    out = Path(grid.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    return result


def load_sweep(output_dir: str | Path) -> SweepResult:
    """Rebuild a SweepResult purely from persisted per-cell files."""
    out = Path(output_dir)
    cells = []
    for marker in sorted((out / "cells").glob("*/cell.json")):
        data = json.loads(marker.read_text())
        cell = Cell(settings=data["settings"], digest=data["digest"])
        cells.append(CellResult(cell=cell, status="ok", reports=data["reports"],
                                report_dir=str(marker.parent)))
    return SweepResult(cells=cells, aggregates=aggregate_cells(cells), output_dir=str(out))


def emit_table(
    result: SweepResult,
    fmt: str = "markdown",
    test_set: Optional[str] = None,
    recall_class_index: Optional[int] = 3,
    recall_class_name: str = "Big Rock",
) -> str:
    """Render the aggregate table: one row per setting, columns Accuracy,
    F1 Macro, mIoU, and the recall of one named class (big_rock by default)."""
    rows = []
    for entry in result.aggregates:
        names = [test_set] if test_set else sorted(entry["metrics"])
        for name in names:
            if name not in entry["metrics"]:
                continue
            metrics = entry["metrics"][name]
            recalls = [
                c.reports[name]["per_class_recall"][recall_class_index]
                for c in result.cells
                if name in c.reports and c.cell.setting_key() == tuple(sorted(entry["settings"].items()))
                and c.reports[name]["per_class_recall"][recall_class_index] is not None
            ] if recall_class_index is not None else []
            label = ", ".join(f"{k}={v}" for k, v in entry["settings"].items()) or "(base)"
            if not test_set:
                label = f"{label} [{name}]"
            rows.append([
                label,
                f"{metrics['accuracy']['mean']:.3f}",
                f"{metrics['f1_macro']['mean']:.3f}",
                f"{metrics['miou']['mean']:.3f}",
                f"{float(np.mean(recalls)):.3f}" if recalls else "n/a",
            ])
    if not rows:
        return "EMPTY_SELECTION: no cells match the requested table filter"

    header = ["Setting", "Accuracy", "F1 Macro", "mIoU", f"{recall_class_name} Recall"]
    if fmt == "tsv":
        return "\n".join("\t".join(r) for r in [header] + rows)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |",
        "|" + "|".join("-" * (w + 2) for w in widths) + "|",
    ]
    lines += ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |" for r in rows]
    return "\n".join(lines)
