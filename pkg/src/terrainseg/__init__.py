"""Multi-mission Mars terrain segmentation experiment framework."""

from .taxonomy import (
    ChannelMode,
    ClassTaxonomy,
    Domain,
    IGNORE_VALUE,
    Split,
    TaxonomyVariant,
    TerrainSample,
    class_pixel_histogram,
    make_taxonomy,
    validate_mask,
)
from .ingest import (
    DatasetManifest,
    PreprocessSpec,
    preprocess_sample,
    read_manifest,
    scan_dataset,
    write_manifest,
)
from .composition import (
    CompositionSpec,
    LabelFractionSpec,
    compose_mixed,
    sample_label_fraction,
    seed_sweep,
)
from .losses import (
    BatchClassStats,
    LossConfig,
    LossKind,
    batch_class_stats,
    combined_loss,
    compute_loss,
    cross_entropy,
    inverse_frequency_ce,
    recall_ce,
)
from .metrics import ConfusionMatrix, EvalReport, accumulate, derive_metrics, load_report, merge
from .models import BackboneFamily, BackboneSpec, PretrainSource, build_model
from .train import Checkpoint, TrainConfig, evaluate, finetune, pixel_accuracy, seed_everything

__version__ = "0.1.0"
