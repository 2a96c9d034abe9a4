"""Class taxonomy, label-mask validation, and per-class pixel statistics.

Label masks are plain ``numpy`` integer arrays of shape (H, W). Valid values
are dense class indices ``0..C-1`` plus the ignore sentinel (255 by default),
which marks null / unlabeled pixels excluded from losses and metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import InvalidLabelValueError

IGNORE_VALUE = 255


class TaxonomyVariant(str, Enum):
    FOUR_CLASS = "FOUR_CLASS"
    SIX_CLASS = "SIX_CLASS"


class Domain(str, Enum):
    MSL = "MSL"
    M2020 = "M2020"


class Split(str, Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


class ChannelMode(str, Enum):
    GRAY = "GRAY"
    COLOR = "COLOR"


# Native capture resolutions (H, W) per mission.
NATIVE_RESOLUTION = {
    Domain.MSL: (1024, 1024),
    Domain.M2020: (960, 1280),
}

_FOUR = ("soil", "bedrock", "sand", "big_rock")
_SIX = _FOUR + ("rover", "background")


@dataclass(frozen=True)
class ClassTaxonomy:
    classes: tuple[str, ...]
    ignore_value: int
    variant: TaxonomyVariant

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index_of(self, name: str) -> int:
        return self.classes.index(name)

    def __post_init__(self):
        if self.ignore_value in range(self.num_classes):
            raise ValueError("ignore_value collides with a class index")


@dataclass(frozen=True)
class TerrainSample:
    """One image / label-mask pair with its provenance tags."""

    image_ref: str
    mask_ref: str
    domain: Domain
    split: Split
    sol: Optional[int] = None
    channels: ChannelMode = ChannelMode.GRAY


def make_taxonomy(variant: TaxonomyVariant | str = TaxonomyVariant.FOUR_CLASS) -> ClassTaxonomy:
    """Build the four- or six-class taxonomy with the standard ignore sentinel.

    The four terrain classes are soil, bedrock, sand, big_rock (indices 0-3);
    the six-class variant appends rover (4) and background (5), which only
    MSL masks can carry.
    """
    variant = TaxonomyVariant(variant)
    classes = _FOUR if variant is TaxonomyVariant.FOUR_CLASS else _SIX
    return ClassTaxonomy(classes=classes, ignore_value=IGNORE_VALUE, variant=variant)


@dataclass(frozen=True)
class MaskValidation:
    ok: bool
    # value -> pixel count, for values outside {0..C-1, ignore_value}
    offending: dict[int, int] = field(default_factory=dict)

    def raise_if_invalid(self):
        if not self.ok:
            raise InvalidLabelValueError(
                f"mask contains invalid label values: {self.offending}",
                offending=self.offending,
            )


def validate_mask(mask: np.ndarray, taxonomy: ClassTaxonomy) -> MaskValidation:
    """Check that every mask value is a valid class index or the ignore value."""
    values, counts = np.unique(np.asarray(mask), return_counts=True)
    bad = {
        int(v): int(n)
        for v, n in zip(values, counts)
        if not (0 <= v < taxonomy.num_classes or v == taxonomy.ignore_value)
    }
    return MaskValidation(ok=not bad, offending=bad)


def mask_pixel_counts(mask: np.ndarray, taxonomy: ClassTaxonomy) -> tuple[np.ndarray, int]:
    """Per-class pixel counts of one mask plus the number of ignored pixels."""
    mask = np.asarray(mask)
    validate_mask(mask, taxonomy).raise_if_invalid()
    flat = mask.ravel()
    labeled = flat[flat != taxonomy.ignore_value]
    counts = np.bincount(labeled, minlength=taxonomy.num_classes).astype(np.int64)
    return counts, int(flat.size - labeled.size)


@dataclass(frozen=True)
class PixelHistogram:
    counts: np.ndarray          # per-class labeled pixel counts
    ignored: int                # ignore-value pixels across readable masks
    skipped: int                # masks that could not be read

    @property
    def total_labeled(self) -> int:
        return int(self.counts.sum())


def class_pixel_histogram(manifest, taxonomy: ClassTaxonomy) -> PixelHistogram:
    """Accumulate per-class pixel counts over every mask in a manifest.

    Unreadable masks are skipped and counted rather than aborting the scan.
    Histograms are additive: concatenating manifests sums their counts.
    """
    counts = np.zeros(taxonomy.num_classes, dtype=np.int64)
    ignored = 0
    skipped = 0
    for sample in manifest.entries:
        try:
            mask = load_mask(sample.mask_ref)
        except OSError:
            skipped += 1
            continue
        c, ig = mask_pixel_counts(mask, taxonomy)
        counts += c
        ignored += ig
    return PixelHistogram(counts=counts, ignored=ignored, skipped=skipped)


def load_mask(path: str | Path) -> np.ndarray:
    """Read a single-channel 8-bit raster mask as an int array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)
