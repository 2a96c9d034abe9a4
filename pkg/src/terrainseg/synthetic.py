"""Synthetic geometric terrain datasets.

These generators render small image/mask pairs whose classes are separable
by intensity and shape, so the full ingest -> compose -> train -> evaluate
pipeline can be exercised on a CPU in seconds. They also provide the
controlled class-imbalance setting used to probe the weighted losses.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .ingest import DatasetManifest
from .taxonomy import ChannelMode, Domain, Split, TaxonomyVariant, TerrainSample

# Mean gray level per class; far enough apart that a small model can
# separate them, close enough that it has to actually learn.
CLASS_LEVELS = (60, 120, 180, 240)


def _render(rng: np.random.Generator, size: int, minority_area: float) -> tuple[np.ndarray, np.ndarray]:
    """One image/mask pair: soil background, a bedrock rectangle, a sand
    band, and a small big_rock square covering ~minority_area of the image."""
    mask = np.zeros((size, size), dtype=np.uint8)

    # bedrock rectangle
    h = rng.integers(size // 4, size // 2)
    w = rng.integers(size // 4, size // 2)
    top, left = rng.integers(0, size - h), rng.integers(0, size - w)
    mask[top:top + h, left:left + w] = 1

    # sand horizontal band
    band = rng.integers(size // 8, size // 4)
    start = rng.integers(0, size - band)
    mask[start:start + band, :] = 2

    # big_rock square sized from the requested minority share
    side = max(2, int(round(size * np.sqrt(minority_area))))
    top, left = rng.integers(0, size - side), rng.integers(0, size - side)
    mask[top:top + side, left:left + side] = 3

    levels = np.array(CLASS_LEVELS, dtype=np.float32)
    image = levels[mask] + rng.normal(0, 8, size=mask.shape).astype(np.float32)
    image = np.clip(image, 0, 255).astype(np.uint8)
    return image, mask


def generate_dataset(
    out_dir: str | Path,
    num_images: int = 32,
    size: int = 64,
    seed: int = 0,
    minority_area: float = 0.02,
    domain: Domain = Domain.MSL,
    split: Split = Split.TRAIN,
    dataset_id: str = "synthetic",
) -> DatasetManifest:
    """Write ``num_images`` image/mask PNG pairs and return their manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))

    entries = []
    for i in range(num_images):
        image, mask = _render(rng, size, minority_area)
        image_path = out_dir / "images" / f"{dataset_id}_{i:04d}.png"
        mask_path = out_dir / "masks" / f"{dataset_id}_{i:04d}.png"
        Image.fromarray(image, mode="L").save(image_path)
        Image.fromarray(mask, mode="L").save(mask_path)
        entries.append(
            TerrainSample(
                image_ref=str(image_path),
                mask_ref=str(mask_path),
                domain=domain,
                split=split,
                channels=ChannelMode.GRAY,
            )
        )
    return DatasetManifest(
        entries=tuple(entries),
        dataset_id=dataset_id,
        taxonomy_variant=TaxonomyVariant.FOUR_CLASS,
    )
