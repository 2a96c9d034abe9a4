"""Segmentation model assembly: encoder families, ASPP head, and pretrained
weight adapters.

The model is a DeepLab-style encoder + Atrous Spatial Pyramid Pooling head
with a 1x1 classifier producing one channel per taxonomy class, bilinearly
upsampled to the input resolution. Encoders come from a small registry;
the TOY family is a <1M-parameter convolutional encoder that makes the full
pipeline runnable on a CPU without external weight files.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import mobilenet_v2, resnet50, resnet101
from torchvision.models.resnet import Bottleneck, ResNet
from torchvision.models.segmentation.deeplabv3 import ASPP

from .errors import ConfigError, ShapeMismatchError, WeightsNotFoundError
from .taxonomy import ClassTaxonomy


class BackboneFamily(str, Enum):
    MOBILENET_V2 = "MOBILENET_V2"
    RESNET_50 = "RESNET_50"
    RESNET_101 = "RESNET_101"
    RESNET_101_2X = "RESNET_101_2X"
    TOY = "TOY"


class PretrainSource(str, Enum):
    SUPERVISED_IMAGENET = "SUPERVISED_IMAGENET"
    CONTRASTIVE_IMAGENET = "CONTRASTIVE_IMAGENET"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class BackboneSpec:
    family: BackboneFamily = BackboneFamily.TOY
    pretrain_source: PretrainSource = PretrainSource.RANDOM
    weights_path: Optional[str] = None

    def __post_init__(self):
        family = BackboneFamily(self.family)
        source = PretrainSource(self.pretrain_source)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "pretrain_source", source)
        if family is BackboneFamily.MOBILENET_V2 and source is PretrainSource.CONTRASTIVE_IMAGENET:
            raise ConfigError("contrastive pretraining weights are not available for MobileNet v2")
        if family is BackboneFamily.TOY and source is not PretrainSource.RANDOM:
            raise ConfigError("the TOY backbone never loads external weights")
        if source is not PretrainSource.RANDOM and not self.weights_path:
            raise ConfigError(f"{source.value} initialization requires weights_path")


class ToyEncoder(nn.Module):
    """Four conv stages (the last two dilated instead of strided);
    ~0.1M parameters, output stride 4."""

    out_channels = 96

    def __init__(self, in_channels: int = 3):
        super().__init__()
        widths = [16, 32, 64, self.out_channels]
        strides = [2, 2, 1, 1]
        dilations = [1, 1, 2, 4]
        layers = []
        prev = in_channels
        for w, s, d in zip(widths, strides, dilations):
            layers += [
                nn.Conv2d(prev, w, 3, stride=s, padding=d, dilation=d, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            prev = w
        self.stages = nn.Sequential(*layers)

    def forward(self, x):
        return self.stages(x)


def _resnet_encoder(ctor, **kwargs) -> tuple[nn.Module, int]:
    net = ctor(weights=None, replace_stride_with_dilation=[False, True, True], **kwargs)
    encoder = nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
    )
    out_channels = net.fc.in_features
    return encoder, out_channels


def _resnet101_2x() -> tuple[nn.Module, int]:
    net = ResNet(
        Bottleneck,
        [3, 4, 23, 3],
        width_per_group=128,
        replace_stride_with_dilation=[False, True, True],
    )
    encoder = nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
    )
    return encoder, net.fc.in_features


def _build_encoder(family: BackboneFamily) -> tuple[nn.Module, int, list[int], int]:
    """Returns (encoder, feature channels, atrous rates, aspp width)."""
    if family is BackboneFamily.TOY:
        return ToyEncoder(), ToyEncoder.out_channels, [2, 4, 6], 64
    if family is BackboneFamily.MOBILENET_V2:
        net = mobilenet_v2(weights=None)
        return net.features, 1280, [6, 12, 18], 256
    if family is BackboneFamily.RESNET_50:
        encoder, ch = _resnet_encoder(resnet50)
        return encoder, ch, [12, 24, 36], 256
    if family is BackboneFamily.RESNET_101:
        encoder, ch = _resnet_encoder(resnet101)
        return encoder, ch, [12, 24, 36], 256
    encoder, ch = _resnet101_2x()
    return encoder, ch, [12, 24, 36], 256


class SegmentationModel(nn.Module):
    """Encoder -> ASPP -> per-class 1x1 classifier -> bilinear upsample."""

    def __init__(self, encoder: nn.Module, feature_channels: int,
                 num_classes: int, atrous_rates: list[int], aspp_channels: int):
        super().__init__()
        self.encoder = encoder
        self.decoder = nn.Sequential(
            ASPP(feature_channels, atrous_rates, out_channels=aspp_channels),
            nn.Conv2d(aspp_channels, num_classes, 1),
        )
        self.num_classes = num_classes

    def forward(self, x):
        size = x.shape[-2:]
        features = self.encoder(x)
        logits = self.decoder(features)
        return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


_ADAPTER_PREFIXES = ("module.", "model.", "backbone.", "encoder.", "net.")


def _adapt_state_dict(raw: dict, encoder: nn.Module) -> dict:
    """Map an external checkpoint layout onto the encoder's parameter names.

    Strips common wrapper prefixes and, for torchvision classification
    checkpoints loaded into the Sequential-packed ResNet encoder, renames the
    layer blocks to their positional indices. Validates that every encoder
    parameter is covered with a matching shape.
    """
    if "state_dict" in raw and isinstance(raw["state_dict"], dict):
        raw = raw["state_dict"]
    cleaned = {}
    for key, value in raw.items():
        for prefix in _ADAPTER_PREFIXES:
            if key.startswith(prefix):
                key = key[len(prefix):]
        cleaned[key] = value

    # torchvision resnet naming -> Sequential index naming
    rename = {
        "conv1": "0", "bn1": "1",
        "layer1": "4", "layer2": "5", "layer3": "6", "layer4": "7",
    }
    remapped = {}
    for key, value in cleaned.items():
        head, _, rest = key.partition(".")
        if head in rename and rest:
            remapped[f"{rename[head]}.{rest}"] = value
        else:
            remapped[key] = value

    target = encoder.state_dict()
    candidates = remapped if all(k in remapped for k in target) else cleaned
    missing = [k for k in target if k not in candidates]
    if missing:
        raise ShapeMismatchError(
            f"checkpoint does not cover {len(missing)} encoder parameters "
            f"(first: {missing[0]})"
        )
    bad = [
        k for k in target
        if tuple(candidates[k].shape) != tuple(target[k].shape)
    ]
    if bad:
        raise ShapeMismatchError(
            f"checkpoint shape mismatch on {len(bad)} parameters (first: {bad[0]})"
        )
    return {k: candidates[k] for k in target}


def load_encoder_weights(encoder: nn.Module, weights_path: str | Path) -> None:
    weights_path = Path(weights_path)
    if not weights_path.is_file():
        raise WeightsNotFoundError(f"weights file not found: {weights_path}")
    raw = torch.load(weights_path, map_location="cpu", weights_only=True)
    encoder.load_state_dict(_adapt_state_dict(raw, encoder))


def build_model(backbone: BackboneSpec, taxonomy: ClassTaxonomy) -> SegmentationModel:
    """Assemble the segmentation model; the decoder is always randomly
    initialized while the encoder optionally loads pretrained parameters."""
    encoder, channels, rates, width = _build_encoder(backbone.family)
    if backbone.pretrain_source is not PretrainSource.RANDOM:
        load_encoder_weights(encoder, backbone.weights_path)
    return SegmentationModel(encoder, channels, taxonomy.num_classes, rates, width)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
