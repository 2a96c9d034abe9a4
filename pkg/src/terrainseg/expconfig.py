"""Experiment configuration files.

Configs are YAML with sections {data, composition, backbone, loss, train,
eval, output}. Paths may reference environment variables (e.g.
``${TERRAINSEG_DATA_ROOT}/manifests/msl_train.tsv``); they are expanded at
load time. ``validate_config`` checks structure and value ranges without
touching the filesystem, so replication recipes can be verified anywhere.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import yaml

from .composition import round_half_up
from .errors import ConfigError
from .experiment import AXIS_NAMES, ExperimentGrid, GridData
from .ingest import PreprocessSpec
from .losses import FrequencyScope, LossConfig, LossKind, RecallScope, WeightNormalization
from .models import BackboneFamily, BackboneSpec, PretrainSource
from .taxonomy import TaxonomyVariant, make_taxonomy
from .train import TrainConfig

DATA_ROOT_ENV = "TERRAINSEG_DATA_ROOT"

_SECTIONS = {"data", "composition", "backbone", "loss", "train", "eval", "output"}


def _expand(path: Optional[str]) -> Optional[str]:
    return os.path.expandvars(path) if path else None


def _enum(cls, value, where):
    try:
        return cls(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_raw(path: str | Path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    unknown = set(raw) - _SECTIONS - {"exclude", "name"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return raw


def _train_config(raw: dict) -> TrainConfig:
    t = raw.get("train", {})
    l = raw.get("loss", {})
    loss = LossConfig(
        kind=_enum(LossKind, l.get("kind", "CE"), "loss.kind"),
        weight_normalization=_enum(
            WeightNormalization, l.get("normalization", "SUM_TO_C"), "loss.normalization"),
        epsilon=float(l.get("epsilon", 1e-8)),
        frequency_scope=_enum(FrequencyScope, l.get("frequency_scope", "BATCH"), "loss.frequency_scope"),
        recall_scope=_enum(RecallScope, l.get("recall_scope", "BATCH"), "loss.recall_scope"),
    )
    taxonomy = make_taxonomy(_enum(TaxonomyVariant, t.get("taxonomy", "FOUR_CLASS"), "train.taxonomy"))
    size = t.get("target_size", [512, 512])
    try:
        return TrainConfig(
            taxonomy=taxonomy,
            loss=loss,
            epochs=int(t.get("epochs", 50)),
            batch_size=int(t.get("batch_size", 16)),
            learning_rate=float(t.get("learning_rate", 1e-5)),
            optimizer=t.get("optimizer", "adam"),
            seed=int(t.get("seed", 0)),
            preprocess=PreprocessSpec(
                target_size=(int(size[0]), int(size[1])),
                to_grayscale=bool(t.get("to_grayscale", True)),
                replicate_channels=int(t.get("replicate_channels", 3)),
            ),
            freeze_encoder=bool(t.get("freeze_encoder", False)),
            device=t.get("device", "cpu"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train section: {exc}") from exc


def _axes(raw: dict) -> dict:
    axes: dict[str, list] = {}
    comp = raw.get("composition", {})
    if "proportions" in comp:
        axes["m2020_proportion"] = [float(p) for p in comp["proportions"]]
    if "fractions" in comp:
        axes["label_fraction"] = [float(f) for f in comp["fractions"]]
    t = raw.get("train", {})
    if "seeds" in t:
        axes["seed"] = [int(s) for s in t["seeds"]]
    l = raw.get("loss", {})
    if "kinds" in l:
        axes["loss_kind"] = [_enum(LossKind, k, "loss.kinds").value for k in l["kinds"]]
    b = raw.get("backbone", {})
    if "families" in b:
        axes["backbone_family"] = [_enum(BackboneFamily, f, "backbone.families").value
                                   for f in b["families"]]
    if "pretrain_sources" in b:
        axes["pretrain_source"] = [_enum(PretrainSource, s, "backbone.pretrain_sources").value
                                   for s in b["pretrain_sources"]]
    return axes


def _backbone(raw: dict, has_axes: bool) -> tuple[BackboneSpec, dict]:
    b = raw.get("backbone", {})
    family = _enum(BackboneFamily, b.get("family", "TOY"), "backbone.family")
    source = _enum(PretrainSource, b.get("pretrain_source", "RANDOM"), "backbone.pretrain_source")
    weights = {}
    for key, path in (b.get("weights") or {}).items():
        try:
            fam, src = key.split("/")
        except ValueError as exc:
            raise ConfigError(f"backbone.weights key {key!r} must be FAMILY/SOURCE") from exc
        weights[(_enum(BackboneFamily, fam, "backbone.weights").value,
                 _enum(PretrainSource, src, "backbone.weights").value)] = _expand(path)
    try:
        spec = BackboneSpec(family=family, pretrain_source=source,
                            weights_path=_expand(b.get("weights_path")))
    except ConfigError:
        if not has_axes:
            raise
        # axis sweeps override family/source per cell; keep a neutral default
        spec = BackboneSpec()
    return spec, weights


def load_grid(path: str | Path, output_dir: Optional[str] = None) -> ExperimentGrid:
    raw = load_raw(path)
    base = _train_config(raw)
    axes = _axes(raw)
    data_section = raw.get("data", {})
    tests = {name: _expand(p) for name, p in (data_section.get("tests")
                                              or raw.get("eval", {}).get("tests") or {}).items()}
    data = GridData(
        msl_train=_expand(data_section.get("msl_train")),
        m2020_train=_expand(data_section.get("m2020_train")),
        train=_expand(data_section.get("train")),
        tests=tests,
    )
    backbone, weights = _backbone(raw, bool({"backbone_family", "pretrain_source"} & set(axes)))
    out = output_dir or _expand(raw.get("output", {}).get("dir")) or "sweep_out"
    exclude = tuple(
        {k: v for k, v in item.items()} for item in raw.get("exclude", [])
    )
    for item in exclude:
        bad = set(item) - set(AXIS_NAMES)
        if bad:
            raise ConfigError(f"exclude entry names unknown axes {sorted(bad)}")
    comp = raw.get("composition", {})
    return ExperimentGrid(
        axes=axes,
        base=base,
        data=data,
        output_dir=str(out),
        cap=int(comp["cap"]) if "cap" in comp else None,
        backbone=backbone,
        weights=weights,
        exclude=exclude,
    )


def validate_config(path: str | Path) -> ExperimentGrid:
    """Structural validation without execution or filesystem access.

    Checks sections, enum values, axis consistency, the per-cell backbone
    availability constraint, and proportion/cap arithmetic against the
    canonical corpus sizes when a cap is declared.
    """
    grid = load_grid(path)
    cells = grid.cells()
    if not cells:
        raise ConfigError(f"{path}: grid has no cells after exclusions")
    for cell in cells:
        if "backbone_family" in cell.settings or "pretrain_source" in cell.settings:
            family = BackboneFamily(cell.settings.get("backbone_family", grid.backbone.family))
            source = PretrainSource(cell.settings.get("pretrain_source", grid.backbone.pretrain_source))
            if family is BackboneFamily.MOBILENET_V2 and source is PretrainSource.CONTRASTIVE_IMAGENET:
                raise ConfigError(
                    f"{path}: cell {cell.settings} pairs MobileNet v2 with contrastive "
                    "weights, which do not exist; add it to the exclude list"
                )
    if "m2020_proportion" in grid.axes and not (grid.data.msl_train and grid.data.m2020_train):
        raise ConfigError(f"{path}: proportion sweeps need data.msl_train and data.m2020_train")
    if "label_fraction" in grid.axes and not grid.data.msl_train:
        raise ConfigError(f"{path}: label-fraction sweeps need data.msl_train")
    if grid.cap is not None:
        for p in grid.axes.get("m2020_proportion", []):
            if round_half_up(p * 1321) > grid.cap:
                raise ConfigError(f"{path}: proportion {p} exceeds cap {grid.cap}")
    for f in grid.axes.get("label_fraction", []):
        if not 0 < f <= 1:
            raise ConfigError(f"{path}: label fraction {f} outside (0, 1]")
    return grid
