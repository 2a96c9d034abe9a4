"""Per-pixel segmentation losses: CE, inverse-frequency CE, recall CE, and
their multiplicative combination.

All losses are the mean over non-ignored pixels of a weighted negative
log-softmax of the true class. Weights depend only on targets and on the
batch argmax, so no gradient flows through them:

* inverse frequency: w_c = 1/freq(c) over classes present in the batch,
  rescaled so present-class weights sum to the number of present classes
  (``SUM_TO_C``), which keeps magnitudes comparable with plain CE.
* recall: w_c = 1 - R_c where R_c is the per-class recall of the batch
  argmax at the current step; classes without ground truth in the batch
  default to weight 1.
* combined: the product of the two per-class factors, with the SUM_TO_C
  rescaling applied to the frequency factor only.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import AllPixelsIgnoredError, ShapeMismatchError
from .taxonomy import IGNORE_VALUE


class LossKind(str, Enum):
    CE = "CE"
    INV_FREQ = "INV_FREQ"
    RECALL = "RECALL"
    INV_FREQ_PLUS_RECALL = "INV_FREQ_PLUS_RECALL"


class WeightNormalization(str, Enum):
    SUM_TO_C = "SUM_TO_C"


class FrequencyScope(str, Enum):
    BATCH = "BATCH"
    CORPUS = "CORPUS"


class RecallScope(str, Enum):
    BATCH = "BATCH"
    RUNNING = "RUNNING"


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.CE
    weight_normalization: WeightNormalization = WeightNormalization.SUM_TO_C
    epsilon: float = 1e-8
    frequency_scope: FrequencyScope = FrequencyScope.BATCH
    recall_scope: RecallScope = RecallScope.BATCH
    recall_momentum: float = 0.9   # only used with RecallScope.RUNNING
    # per-class corpus frequencies, required with FrequencyScope.CORPUS
    corpus_frequencies: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.frequency_scope is FrequencyScope.CORPUS and self.corpus_frequencies is None:
            raise ValueError("corpus frequencies required for FrequencyScope.CORPUS")


@dataclass(frozen=True)
class BatchClassStats:
    """Per-class counts of one batch: ground-truth pixels, true positives,
    false negatives, and the recall they imply. Ignore pixels excluded."""

    pixel_counts: torch.Tensor   # N_c, long (C,)
    true_positives: torch.Tensor
    false_negatives: torch.Tensor

    @property
    def recall(self) -> torch.Tensor:
        """R_c = TP / (TP + FN); classes without ground truth get recall 0,
        which makes the pessimistic default weight (1 - R) = 1."""
        denom = self.true_positives + self.false_negatives
        return torch.where(
            denom > 0,
            self.true_positives.double() / denom.clamp(min=1).double(),
            torch.zeros_like(denom, dtype=torch.double),
        )


def _validate(logits: torch.Tensor, target: torch.Tensor, ignore_value: int) -> torch.Tensor:
    if logits.dim() != 4 or target.dim() != 3 or logits.shape[0::2] != (target.shape[0], target.shape[1]) \
            or logits.shape[2:] != target.shape[1:]:
        raise ShapeMismatchError(
            f"logits {tuple(logits.shape)} incompatible with target {tuple(target.shape)}"
        )
    valid = target != ignore_value
    if not bool(valid.any()):
        raise AllPixelsIgnoredError("every pixel in the batch carries the ignore value")
    return valid


def batch_class_stats(
    logits: torch.Tensor,
    target: torch.Tensor,
    num_classes: int,
    ignore_value: int = IGNORE_VALUE,
) -> BatchClassStats:
    """Counts from the batch argmax vs target, detached from the graph."""
    valid = _validate(logits, target, ignore_value)
    with torch.no_grad():
        pred = logits.argmax(dim=1)
        t = target[valid]
        p = pred[valid]
        pixel_counts = torch.bincount(t, minlength=num_classes)
        tp = torch.bincount(t[p == t], minlength=num_classes)
        fn = pixel_counts - tp
    return BatchClassStats(pixel_counts=pixel_counts, true_positives=tp, false_negatives=fn)


def _per_pixel_ce(logits: torch.Tensor, target: torch.Tensor, valid: torch.Tensor):
    """(flattened CE terms, flattened true classes) over valid pixels only."""
    logp = F.log_softmax(logits.double(), dim=1)
    t = target.clone()
    t[~valid] = 0  # placeholder index; these terms are dropped below
    picked = logp.gather(1, t.unsqueeze(1)).squeeze(1)
    return -picked[valid], target[valid]


def _frequency_weights(
    pixel_counts: torch.Tensor, config: LossConfig
) -> torch.Tensor:
    """SUM_TO_C-normalized inverse-frequency weights; absent classes get 0."""
    present = pixel_counts > 0
    if config.frequency_scope is FrequencyScope.CORPUS:
        freq = torch.tensor(config.corpus_frequencies, dtype=torch.double)
        if freq.numel() != pixel_counts.numel():
            raise ShapeMismatchError("corpus_frequencies length != number of classes")
    else:
        freq = pixel_counts.double() / pixel_counts.sum().double()
    raw = torch.where(present, 1.0 / (freq + config.epsilon), torch.zeros_like(freq))
    scale = present.sum().double() / raw.sum()
    return raw * scale


def _reduce(ce_terms: torch.Tensor, weights_per_pixel: torch.Tensor) -> torch.Tensor:
    return (weights_per_pixel * ce_terms).mean()


def cross_entropy(
    logits: torch.Tensor, target: torch.Tensor, ignore_value: int = IGNORE_VALUE
) -> torch.Tensor:
    """Mean negative log-softmax of the true class over non-ignored pixels."""
    valid = _validate(logits, target, ignore_value)
    ce, _ = _per_pixel_ce(logits, target, valid)
    return ce.mean()


def inverse_frequency_ce(
    logits: torch.Tensor,
    target: torch.Tensor,
    config: LossConfig = LossConfig(kind=LossKind.INV_FREQ),
    ignore_value: int = IGNORE_VALUE,
) -> torch.Tensor:
    valid = _validate(logits, target, ignore_value)
    ce, true_class = _per_pixel_ce(logits, target, valid)
    counts = torch.bincount(true_class, minlength=logits.shape[1])
    weights = _frequency_weights(counts, config)
    return _reduce(ce, weights[true_class])


def recall_ce(
    logits: torch.Tensor,
    target: torch.Tensor,
    config: LossConfig = LossConfig(kind=LossKind.RECALL),
    stats: Optional[BatchClassStats] = None,
    ignore_value: int = IGNORE_VALUE,
) -> torch.Tensor:
    valid = _validate(logits, target, ignore_value)
    if stats is None:
        stats = batch_class_stats(logits, target, logits.shape[1], ignore_value)
    ce, true_class = _per_pixel_ce(logits, target, valid)
    weights = (1.0 - stats.recall).detach()
    return _reduce(ce, weights[true_class])


def combined_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    config: LossConfig = LossConfig(kind=LossKind.INV_FREQ_PLUS_RECALL),
    stats: Optional[BatchClassStats] = None,
    ignore_value: int = IGNORE_VALUE,
) -> torch.Tensor:
    valid = _validate(logits, target, ignore_value)
    if stats is None:
        stats = batch_class_stats(logits, target, logits.shape[1], ignore_value)
    ce, true_class = _per_pixel_ce(logits, target, valid)
    counts = torch.bincount(true_class, minlength=logits.shape[1])
    weights = _frequency_weights(counts, config) * (1.0 - stats.recall).detach()
    return _reduce(ce, weights[true_class])


class RunningRecall:
    """Exponential moving average of per-class recall across steps, for the
    RUNNING recall scope. Classes unseen so far keep recall 0 (weight 1)."""

    def __init__(self, num_classes: int, momentum: float = 0.9):
        self.momentum = momentum
        self.recall = torch.zeros(num_classes, dtype=torch.double)
        self._seen = torch.zeros(num_classes, dtype=torch.bool)

    def update(self, stats: BatchClassStats) -> BatchClassStats:
        observed = (stats.true_positives + stats.false_negatives) > 0
        batch_recall = stats.recall
        blended = torch.where(
            self._seen & observed,
            self.momentum * self.recall + (1 - self.momentum) * batch_recall,
            torch.where(observed, batch_recall, self.recall),
        )
        self.recall = blended
        self._seen |= observed
        # Re-express as synthetic TP/FN so downstream code sees one interface.
        tp = (self.recall * 1_000_000).round().long()
        fn = 1_000_000 - tp
        tp = torch.where(self._seen, tp, torch.zeros_like(tp))
        fn = torch.where(self._seen, fn, torch.zeros_like(fn))
        return BatchClassStats(
            pixel_counts=stats.pixel_counts, true_positives=tp, false_negatives=fn
        )


def compute_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    config: LossConfig,
    stats: Optional[BatchClassStats] = None,
    ignore_value: int = IGNORE_VALUE,
) -> torch.Tensor:
    """Dispatch on ``config.kind``; the single entry point the trainer uses."""
    if config.kind is LossKind.CE:
        return cross_entropy(logits, target, ignore_value)
    if config.kind is LossKind.INV_FREQ:
        return inverse_frequency_ce(logits, target, config, ignore_value)
    if config.kind is LossKind.RECALL:
        return recall_ce(logits, target, config, stats, ignore_value)
    return combined_loss(logits, target, config, stats, ignore_value)
