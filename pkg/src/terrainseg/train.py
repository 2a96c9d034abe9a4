"""Finetuning loop and evaluation.

Determinism contract: on a single device, identical (config, seed, manifest)
reproduce the run bitwise. Batch order for epoch ``e`` is a pure function of
(seed, manifest content hash, e), so an interrupted run resumed from a
checkpoint follows the same trajectory as an uninterrupted one.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .errors import DivergedError, SplitViolationError
from .ingest import DatasetManifest, PreprocessSpec, preprocess_sample
from .losses import LossConfig, LossKind, RecallScope, RunningRecall, batch_class_stats, compute_loss
from .metrics import ConfusionMatrix, EvalReport, accumulate, derive_metrics
from .models import BackboneSpec, SegmentationModel, build_model
from .taxonomy import ClassTaxonomy, make_taxonomy


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


@dataclass(frozen=True)
class TrainConfig:
    taxonomy: ClassTaxonomy = field(default_factory=make_taxonomy)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-5
    optimizer: str = "adam"          # adam | sgd
    seed: int = 0
    checkpoint_dir: Optional[str] = None
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    freeze_encoder: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("hyperparameters must be positive (epochs may be 0)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def digest(self) -> str:
        payload = {
            "classes": self.taxonomy.classes,
            "ignore_value": self.taxonomy.ignore_value,
            "loss": {
                "kind": self.loss.kind.value,
                "normalization": self.loss.weight_normalization.value,
                "epsilon": self.loss.epsilon,
                "frequency_scope": self.loss.frequency_scope.value,
                "recall_scope": self.loss.recall_scope.value,
            },
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "preprocess": {
                "target_size": self.preprocess.target_size,
                "to_grayscale": self.preprocess.to_grayscale,
                "replicate_channels": self.preprocess.replicate_channels,
            },
            "freeze_encoder": self.freeze_encoder,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict
    epoch: int
    config_digest: str
    history: list[dict]
    seed: int
    num_classes: int
    running_recall: Optional[list] = None
    running_seen: Optional[list] = None

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.__dict__, path)
        return path

    @staticmethod
    def load(path: str | Path) -> "Checkpoint":
        data = torch.load(path, map_location="cpu", weights_only=False)
        return Checkpoint(**data)


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    history: list[dict]            # per-epoch {epoch, train_loss, train_accuracy, ...}
    best_checkpoint_path: Optional[Path] = None
    last_checkpoint_path: Optional[Path] = None


def _epoch_order(seed: int, manifest_hash: str, epoch: int, n: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{manifest_hash}:{epoch}".encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    return rng.permutation(n)


def _epoch_torch_seed(seed: int, manifest_hash: str, epoch: int) -> int:
    # Stochastic layers (e.g. dropout) draw from the global torch RNG, so the
    # RNG is re-seeded per epoch to keep resumed runs on the same trajectory.
    digest = hashlib.sha256(f"{seed}:{manifest_hash}:{epoch}:torch".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _load_batch(manifest: DatasetManifest, indices, spec: PreprocessSpec, device: str):
    images, masks = [], []
    for i in indices:
        image, mask = preprocess_sample(manifest.entries[i], spec)
        images.append(image)
        masks.append(mask)
    x = torch.from_numpy(np.stack(images)).to(device)
    y = torch.from_numpy(np.stack(masks)).to(device)
    return x, y


def _make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate)
    return torch.optim.SGD(params, lr=config.learning_rate)


def finetune(
    model: SegmentationModel,
    train_manifest: DatasetManifest,
    config: TrainConfig,
    resume_from: Optional[Checkpoint] = None,
) -> FinetuneResult:
    """Run the finetuning loop; returns the final checkpoint and history.

    With ``checkpoint_dir`` set, persists ``last.pt`` every epoch and
    ``best.pt`` whenever train accuracy improves. A non-finite loss aborts
    immediately, naming the offending batch.
    """
    if len(train_manifest) == 0:
        raise ValueError("train manifest is empty")
    device = config.device
    model = model.to(device)
    if config.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)

    optimizer = _make_optimizer(model, config)
    history: list[dict] = []
    start_epoch = 0
    if resume_from is not None:
        model.load_state_dict(resume_from.model_state)
        optimizer.load_state_dict(resume_from.optimizer_state)
        history = list(resume_from.history)
        start_epoch = resume_from.epoch

    manifest_hash = train_manifest.content_hash
    num_classes = config.taxonomy.num_classes
    ignore = config.taxonomy.ignore_value
    running = RunningRecall(num_classes, config.loss.recall_momentum) \
        if config.loss.recall_scope is RecallScope.RUNNING else None
    if resume_from is not None and running is not None \
            and resume_from.running_recall is not None:
        running.recall = torch.tensor(resume_from.running_recall, dtype=torch.double)
        running._seen = torch.tensor(resume_from.running_seen, dtype=torch.bool)

    checkpoint_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    best_accuracy = max((h.get("train_accuracy", -1.0) for h in history), default=-1.0)
    best_path = last_path = None

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            model_state={k: v.clone() for k, v in model.state_dict().items()},
            optimizer_state=optimizer.state_dict(),
            epoch=epoch,
            config_digest=config.digest(),
            history=list(history),
            seed=config.seed,
            num_classes=num_classes,
            running_recall=running.recall.tolist() if running is not None else None,
            running_seen=running._seen.tolist() if running is not None else None,
        )

    for epoch in range(start_epoch, config.epochs):
        model.train()
        torch.manual_seed(_epoch_torch_seed(config.seed, manifest_hash, epoch))
        order = _epoch_order(config.seed, manifest_hash, epoch, len(train_manifest))
        epoch_losses = []
        cm = ConfusionMatrix.zeros(num_classes)
        for start in range(0, len(order), config.batch_size):
            batch_id = f"epoch{epoch}/batch{start // config.batch_size}"
            indices = order[start:start + config.batch_size]
            x, y = _load_batch(train_manifest, indices, config.preprocess, device)
            logits = model(x)
            stats = None
            if config.loss.kind in (LossKind.RECALL, LossKind.INV_FREQ_PLUS_RECALL):
                stats = batch_class_stats(logits, y, num_classes, ignore)
                if running is not None:
                    stats = running.update(stats)
            loss = compute_loss(logits, y, config.loss, stats=stats, ignore_value=ignore)
            if not torch.isfinite(loss):
                raise DivergedError(f"non-finite loss at {batch_id}", batch_id=batch_id)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
            with torch.no_grad():
                cm = accumulate(cm, logits.argmax(1).cpu().numpy(), y.cpu().numpy(), ignore)

        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "train_accuracy": float(np.trace(cm.counts) / max(cm.total, 1)),
        }
        history.append(record)

        if checkpoint_dir is not None:
            last_path = snapshot(epoch + 1).save(checkpoint_dir / "last.pt")
            if record["train_accuracy"] > best_accuracy:
                best_accuracy = record["train_accuracy"]
                best_path = snapshot(epoch + 1).save(checkpoint_dir / "best.pt")

    result = FinetuneResult(
        checkpoint=snapshot(config.epochs if config.epochs else start_epoch),
        history=history,
        best_checkpoint_path=best_path,
        last_checkpoint_path=last_path,
    )
    return result


def _accumulate_over_manifest(
    model: SegmentationModel,
    manifest: DatasetManifest,
    taxonomy: ClassTaxonomy,
    preprocess: PreprocessSpec,
    batch_size: int = 8,
    device: str = "cpu",
) -> ConfusionMatrix:
    model = model.to(device)
    model.eval()
    cm = ConfusionMatrix.zeros(taxonomy.num_classes)
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            indices = range(start, min(start + batch_size, len(manifest)))
            x, y = _load_batch(manifest, indices, preprocess, device)
            pred = model(x).argmax(1)
            cm = accumulate(cm, pred.cpu().numpy(), y.cpu().numpy(), taxonomy.ignore_value)
    return cm


def pixel_accuracy(
    model: SegmentationModel,
    manifest: DatasetManifest,
    taxonomy: ClassTaxonomy,
    preprocess: PreprocessSpec = PreprocessSpec(),
    device: str = "cpu",
) -> float:
    """Plain pixel accuracy over any manifest (train or test); handy for
    smoke checks that inspect fit quality on the training set itself."""
    cm = _accumulate_over_manifest(model, manifest, taxonomy, preprocess, device=device)
    return float(np.trace(cm.counts) / max(cm.total, 1))


def evaluate(
    model_or_checkpoint: Union[SegmentationModel, Checkpoint],
    test_manifest: DatasetManifest,
    taxonomy: ClassTaxonomy,
    preprocess: PreprocessSpec = PreprocessSpec(),
    backbone: Optional[BackboneSpec] = None,
    device: str = "cpu",
) -> EvalReport:
    """Accumulate the confusion matrix over a TEST-split manifest and derive
    the full report. Rejects manifests containing TRAIN entries."""
    offenders = [s.image_ref for s in test_manifest.entries if s.split.value != "TEST"]
    if offenders:
        raise SplitViolationError(
            f"{len(offenders)} non-TEST entries in eval manifest (first: {offenders[0]})"
        )
    if isinstance(model_or_checkpoint, Checkpoint):
        model = build_model(backbone or BackboneSpec(), taxonomy)
        model.load_state_dict(model_or_checkpoint.model_state)
    else:
        model = model_or_checkpoint
    cm = _accumulate_over_manifest(model, test_manifest, taxonomy, preprocess, device=device)
    return derive_metrics(cm)
