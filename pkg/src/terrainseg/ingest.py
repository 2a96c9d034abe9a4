"""Dataset scanning, manifest serialization, and image/mask preprocessing.

A manifest is an ordered list of :class:`TerrainSample` records plus a
content hash over the entries. On disk it is a UTF-8 TSV file: one header
line (``# dataset_id=... taxonomy_variant=... [seed=...]``, tab separated)
followed by one record per line with fields
(image_ref, mask_ref, domain, split, sol, channels).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptFileError, EmptyDatasetError, ParseError
from .taxonomy import (
    ChannelMode,
    Domain,
    Split,
    TaxonomyVariant,
    TerrainSample,
)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}

# Expected corpus sizes, used for informational logging at scan time.
EXPECTED_COUNTS = {
    (Domain.MSL, Split.TRAIN): 16064,
    (Domain.MSL, Split.TEST): 322,
    (Domain.M2020, Split.TRAIN): 1321,
    (Domain.M2020, Split.TEST): 49,
}


def _entry_fields(s: TerrainSample) -> tuple[str, ...]:
    sol = "" if s.sol is None else str(s.sol)
    return (s.image_ref, s.mask_ref, s.domain.value, s.split.value, sol, s.channels.value)


def _hash_entries(entries: Iterable[TerrainSample]) -> str:
    h = hashlib.sha256()
    for s in entries:
        h.update("\t".join(_entry_fields(s)).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[TerrainSample, ...]
    dataset_id: str
    taxonomy_variant: TaxonomyVariant = TaxonomyVariant.FOUR_CLASS
    seed: Optional[int] = None

    @property
    def content_hash(self) -> str:
        return _hash_entries(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def domain_counts(self) -> dict[Domain, int]:
        counts = {d: 0 for d in Domain}
        for s in self.entries:
            counts[s.domain] += 1
        return counts


@dataclass(frozen=True)
class ScanReport:
    manifest: DatasetManifest
    missing_mask: tuple[str, ...]    # image stems with no matching mask
    missing_image: tuple[str, ...]   # mask stems with no matching image
    expected_count: Optional[int]


def _index_by_stem(directory: Path) -> dict[str, Path]:
    files: dict[str, Path] = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
            files.setdefault(p.stem, p)
    return files


def scan_dataset(
    root: str | Path,
    domain: Domain | str,
    split: Split | str,
    dataset_id: Optional[str] = None,
    taxonomy_variant: TaxonomyVariant | str = TaxonomyVariant.FOUR_CLASS,
) -> ScanReport:
    """Pair images with masks under ``root`` and build a manifest.

    Expects ``root/images`` and ``root/masks`` (``labels`` also accepted)
    subtrees whose files match by stem. Entries are ordered lexicographically
    by image path, so repeated scans of an unchanged tree hash identically.
    """
    root = Path(root)
    domain = Domain(domain)
    split = Split(split)
    taxonomy_variant = TaxonomyVariant(taxonomy_variant)

    image_dir = root / "images"
    mask_dir = next((root / d for d in ("masks", "labels") if (root / d).is_dir()), root / "masks")
    images = _index_by_stem(image_dir) if image_dir.is_dir() else {}
    masks = _index_by_stem(mask_dir) if mask_dir.is_dir() else {}

    channels = ChannelMode.COLOR if (domain is Domain.M2020 and split is Split.TRAIN) else ChannelMode.GRAY
    entries = []
    for stem in sorted(images):
        if stem in masks:
            entries.append(
                TerrainSample(
                    image_ref=str(images[stem]),
                    mask_ref=str(masks[stem]),
                    domain=domain,
                    split=split,
                    channels=channels,
                )
            )
    if not entries:
        raise EmptyDatasetError(f"no (image, mask) pairs found under {root}", root=str(root))

    missing_mask = tuple(sorted(set(images) - set(masks)))
    missing_image = tuple(sorted(set(masks) - set(images)))
    manifest = DatasetManifest(
        entries=tuple(entries),
        dataset_id=dataset_id or f"{domain.value.lower()}_{split.value.lower()}",
        taxonomy_variant=taxonomy_variant,
    )
    return ScanReport(
        manifest=manifest,
        missing_mask=missing_mask,
        missing_image=missing_image,
        expected_count=EXPECTED_COUNTS.get((domain, split)),
    )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"# dataset_id={manifest.dataset_id}", f"taxonomy_variant={manifest.taxonomy_variant.value}"]
    if manifest.seed is not None:
        header.append(f"seed={manifest.seed}")
    lines = ["\t".join(header)]
    lines += ["\t".join(_entry_fields(s)) for s in manifest.entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError(f"{path}: missing manifest header", line=1)

    header = dict(
        item.split("=", 1)
        for item in lines[0].lstrip("# ").split("\t")
        if "=" in item
    )
    if "dataset_id" not in header or "taxonomy_variant" not in header:
        raise ParseError(f"{path}: header must carry dataset_id and taxonomy_variant", line=1)

    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}", line=lineno)
        image_ref, mask_ref, domain, split, sol, channels = parts
        try:
            entries.append(
                TerrainSample(
                    image_ref=image_ref,
                    mask_ref=mask_ref,
                    domain=Domain(domain),
                    split=Split(split),
                    sol=int(sol) if sol else None,
                    channels=ChannelMode(channels),
                )
            )
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from exc

    return DatasetManifest(
        entries=tuple(entries),
        dataset_id=header["dataset_id"],
        taxonomy_variant=TaxonomyVariant(header["taxonomy_variant"]),
        seed=int(header["seed"]) if "seed" in header else None,
    )


@dataclass(frozen=True)
class PreprocessSpec:
    """How raw files are normalized before entering the model.

    Defaults reconcile the cross-mission mismatch: everything is resized to a
    square target, converted to grayscale (both missions' test sets are
    grayscale), and replicated to 3 channels to keep pretrained encoders'
    input contract.
    """

    target_size: tuple[int, int] = (512, 512)   # (H, W)
    to_grayscale: bool = True
    replicate_channels: int = 3

    def __post_init__(self):
        if self.target_size[0] <= 0 or self.target_size[1] <= 0:
            raise ValueError("target_size must be positive")
        if self.replicate_channels not in (1, 3):
            raise ValueError("replicate_channels must be 1 or 3")


def preprocess_sample(sample: TerrainSample, spec: PreprocessSpec = PreprocessSpec()):
    """Load and normalize one sample.

    Returns ``(image, mask)`` where image is float32 (C, H, W) in [0, 1] and
    mask is int64 (H, W). The image is resized bilinearly; the mask with
    nearest-neighbor so label values are never interpolated.
    """
    h, w = spec.target_size
    try:
        with Image.open(sample.image_ref) as img:
            if spec.to_grayscale:
                img = img.convert("L")
            else:
                img = img.convert("RGB")
            img = img.resize((w, h), resample=Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
        with Image.open(sample.mask_ref) as m:
            m = m.convert("L").resize((w, h), resample=Image.NEAREST)
            mask = np.asarray(m, dtype=np.int64)
    except (OSError, UnidentifiedImageError) as exc:
        raise CorruptFileError(f"cannot read sample {sample.image_ref}: {exc}") from exc

    if arr.ndim == 2:
        arr = arr[None]
        if spec.replicate_channels == 3:
            arr = np.repeat(arr, 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr, mask
