"""Static figure emitters for sweep results and evaluation artifacts.

Solid lines show the mean across seeds; shaded bands show the 95%
confidence interval (only drawn when at least two seeds exist). Confusion
matrices are rendered row-normalized (recall-oriented) while raw counts
stay in the persisted reports.
"""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import MissingAxisError
from .metrics import ConfusionMatrix
from .experiment import METRIC_KEYS, SweepResult


class PlotKind(str, Enum):
    PROPORTION_CURVE = "PROPORTION_CURVE"
    LABEL_FRACTION_CURVE = "LABEL_FRACTION_CURVE"
    CONFUSION_HEATMAP = "CONFUSION_HEATMAP"
    CLASS_DISTRIBUTION = "CLASS_DISTRIBUTION"
    MODEL_SIZE_CURVE = "MODEL_SIZE_CURVE"


_AXIS_FOR_KIND = {
    PlotKind.PROPORTION_CURVE: "m2020_proportion",
    PlotKind.LABEL_FRACTION_CURVE: "label_fraction",
    PlotKind.MODEL_SIZE_CURVE: "backbone_family",
}

_AXIS_LABEL = {
    "m2020_proportion": "M2020 proportion of training set",
    "label_fraction": "Fraction of labeled training images",
    "backbone_family": "Backbone",
}


def _curve_points(result: SweepResult, axis: str, test_set: str, metric: str):
    points = []
    for entry in result.aggregates:
        if axis not in entry["settings"] or test_set not in entry["metrics"]:
            continue
        m = entry["metrics"][test_set][metric]
        points.append((entry["settings"][axis], m["mean"], m["ci95"]))
    points.sort(key=lambda t: str(t[0]))
    return points


def plot_sweep(
    result: SweepResult,
    kind: PlotKind | str,
    out_dir: str | Path,
    baselines: Optional[dict] = None,
) -> list[Path]:
    """One image per (metric, test set) pair for curve kinds.

    ``baselines`` optionally maps test-set name to a reference value drawn
    as a horizontal dotted line (e.g. the full-dataset score).
    """
    kind = PlotKind(kind)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = _AXIS_FOR_KIND.get(kind)
    if axis is None:
        raise ValueError(f"{kind} is not a sweep-curve kind; use the dedicated helper")

    test_sets = sorted({name for e in result.aggregates for name in e["metrics"]})
    if not test_sets or not any(axis in e["settings"] for e in result.aggregates):
        raise MissingAxisError(f"sweep result carries no {axis!r} axis to plot")

    written = []
    for test_set in test_sets:
        for metric in METRIC_KEYS:
            points = _curve_points(result, axis, test_set, metric)
            if not points:
                continue
            xs = [p[0] for p in points]
            means = np.array([p[1] for p in points])
            cis = [p[2] for p in points]
            fig, ax = plt.subplots(figsize=(5, 3.5))
            x_pos = np.arange(len(xs)) if axis == "backbone_family" else np.array(xs, dtype=float)
            ax.plot(x_pos, means, marker="o", label="seed mean")
            if all(ci is not None for ci in cis):
                band = np.array(cis)
                ax.fill_between(x_pos, means - band, means + band, alpha=0.25, label="95% CI")
            if baselines and test_set in baselines:
                ax.axhline(baselines[test_set], color="black", linestyle=":", label="full-dataset baseline")
            if axis == "backbone_family":
                ax.set_xticks(x_pos, xs, rotation=20)
            if axis == "label_fraction":
                ax.set_xscale("log")
            ax.set_xlabel(_AXIS_LABEL[axis])
            ax.set_ylabel(metric)
            ax.set_title(f"{metric} on {test_set}")
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = out_dir / f"{kind.value.lower()}_{test_set}_{metric}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written


def plot_confusion_heatmap(
    cm: ConfusionMatrix,
    class_names,
    out_path: str | Path,
    title: str = "Confusion matrix",
) -> Path:
    norm = cm.row_normalized()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(class_names)), class_names, rotation=30)
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Ground truth")
    ax.set_title(title)
    for i in range(norm.shape[0]):
        for j in range(norm.shape[1]):
            ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center",
                    color="white" if norm[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_class_distribution(
    counts_by_dataset: dict[str, np.ndarray],
    class_names,
    out_path: str | Path,
) -> Path:
    """Grouped bars of per-class labeled pixel counts, in megapixels."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    names = list(counts_by_dataset)
    width = 0.8 / max(len(names), 1)
    x = np.arange(len(class_names))
    for i, name in enumerate(names):
        ax.bar(x + i * width, np.asarray(counts_by_dataset[name]) / 1e6, width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2, class_names, rotation=20)
    ax.set_ylabel("Labeled pixels (megapixels)")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
