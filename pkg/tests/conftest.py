import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from terrainseg.ingest import DatasetManifest
from terrainseg.synthetic import generate_dataset
from terrainseg.taxonomy import (
    ChannelMode,
    Domain,
    Split,
    TaxonomyVariant,
    TerrainSample,
    make_taxonomy,
)


def make_pool(n, domain, split=Split.TRAIN, dataset_id=None):
    """Manifest of n placeholder samples; file refs are never opened."""
    entries = tuple(
        TerrainSample(
            image_ref=f"/data/{domain.value.lower()}/images/{i:05d}.png",
            mask_ref=f"/data/{domain.value.lower()}/masks/{i:05d}.png",
            domain=domain,
            split=split,
            channels=ChannelMode.GRAY,
        )
        for i in range(n)
    )
    return DatasetManifest(
        entries=entries,
        dataset_id=dataset_id or f"pool_{domain.value.lower()}_{n}",
        taxonomy_variant=TaxonomyVariant.FOUR_CLASS,
    )


@pytest.fixture(scope="session")
def taxonomy4():
    return make_taxonomy("FOUR_CLASS")


@pytest.fixture(scope="session")
def taxonomy6():
    return make_taxonomy("SIX_CLASS")


@pytest.fixture(scope="session")
def msl_pool():
    return make_pool(16064, Domain.MSL)


@pytest.fixture(scope="session")
def m2020_pool():
    return make_pool(1321, Domain.M2020)


@pytest.fixture(scope="session")
def synthetic_train(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic_train")
    return generate_dataset(root, num_images=32, size=64, seed=11)


@pytest.fixture(scope="session")
def synthetic_test(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic_test")
    return generate_dataset(root, num_images=8, size=64, seed=99, split=Split.TEST,
                            dataset_id="synthetic_test")


def random_instance(rng, batch=2, size=8, num_classes=3, ignore_fraction=0.1, ignore_value=255):
    """Random logits/target pair as nested lists + numpy, for oracle checks."""
    logits = rng.normal(0, 2, size=(batch, num_classes, size, size))
    target = rng.integers(0, num_classes, size=(batch, size, size))
    ignore = rng.random(size=target.shape) < ignore_fraction
    target = np.where(ignore, ignore_value, target)
    return logits, target
