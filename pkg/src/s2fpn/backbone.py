"""ResNet-18/34 feature extractors exposing the five-level hierarchy.

The classifier head (global pool + fc) is never built; the model ends at
the last residual stage. The "34m" variant is ResNet-34 with the first
block of the second residual stage running at stride 1, which doubles the
spatial dims of the three deepest taps while keeping parameters identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, MaxPool2d, Module
from .serialize import read_checkpoint
from .tensor import Tensor

STAGE_WIDTHS = (64, 128, 256, 512)

_BLOCK_COUNTS = {"r18": (2, 2, 2, 2), "r34": (3, 4, 6, 3), "r34m": (3, 4, 6, 3)}
_STAGE_STRIDES = {"r18": (1, 2, 2, 2), "r34": (1, 2, 2, 2), "r34m": (1, 1, 2, 2)}


@dataclass
class FeatureHierarchy:
    """Backbone taps f1..f5 with their downsampling factors."""

    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Tensor
    strides: tuple[int, int, int, int, int]

    def __iter__(self):
        return iter((self.f1, self.f2, self.f3, self.f4, self.f5))


class BasicBlock(Module):
    def __init__(self, in_channels, out_channels, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.down_conv = Conv2d(in_channels, out_channels, 1, stride=stride, bias=False, rng=rng)
            self.down_bn = BatchNorm2d(out_channels)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x):
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return ops.relu(h + shortcut)


class Stage(Module):
    def __init__(self, in_channels, out_channels, blocks, stride, rng):
        super().__init__()
        self.count = blocks
        for i in range(blocks):
            block = BasicBlock(
                in_channels if i == 0 else out_channels,
                out_channels,
                stride if i == 0 else 1,
                rng,
            )
            setattr(self, str(i), block)

    def forward(self, x):
        for i in range(self.count):
            x = self._modules[str(i)](x)
        return x


class Backbone(Module):
    def __init__(self, variant: str, rng: np.random.Generator):
        super().__init__()
        variant = variant.lower()
        if variant not in _BLOCK_COUNTS:
            raise ConfigError(
                f"unknown backbone variant {variant!r}; expected one of r18, r34, r34m"
            )
        self.variant = variant
        self.block_counts = _BLOCK_COUNTS[variant]
        stage_strides = _STAGE_STRIDES[variant]
        self.stem_conv = Conv2d(3, 64, 7, stride=2, padding=3, bias=False, rng=rng)
        self.stem_bn = BatchNorm2d(64)
        self.stem_pool = MaxPool2d(3, 2, 1)
        in_channels = 64
        for i, (width, blocks, stride) in enumerate(
            zip(STAGE_WIDTHS, self.block_counts, stage_strides), start=1
        ):
            setattr(self, f"layer{i}", Stage(in_channels, width, blocks, stride, rng))
            in_channels = width
        strides = [2, 4]
        s = 4
        for stage_stride in stage_strides[1:]:
            s *= stage_stride
            strides.append(s)
        self.feature_strides = tuple(strides)
        self.max_stride = max(strides)

    def forward(self, x: Tensor) -> FeatureHierarchy:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"backbone expects (N, 3, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        d = self.max_stride
        if h % d or w % d:
            raise ShapeError(
                f"input dims ({h}, {w}) must be divisible by {d} for variant {self.variant}"
            )
        f1 = ops.relu(self.stem_bn(self.stem_conv(x)))
        pooled = self.stem_pool(f1)
        f2 = self.layer1(pooled)
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return FeatureHierarchy(f1, f2, f3, f4, f5, self.feature_strides)


def build_backbone(variant: str, rng: np.random.Generator | None = None) -> Backbone:
    return Backbone(variant, rng or np.random.default_rng(0))


def import_weights(backbone: Backbone, path) -> tuple[int, list[str], list[str]]:
    """Load name-matched tensors from a checkpoint file.

    Returns (count_loaded, missing_names, unexpected_names); shape
    mismatches raise, naming the offending tensor and both shapes.
    """
    state = read_checkpoint(path)
    loaded, missing, unexpected = backbone.load_state_dict(state)
    return len(loaded), missing, unexpected
