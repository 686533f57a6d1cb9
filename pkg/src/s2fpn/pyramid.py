"""Top-down attention pyramid: per-level fusion stages plus the two
depthwise adapters that seed it from the deepest backbone tap."""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Dropout, Module
from .attention import ChannelAttention, StripAttention

LATERAL_CHANNELS = {2: 64, 3: 128, 4: 256, 5: 512}


class DepthwiseProjection(Module):
    """Depthwise 3x3 (stride 1 or 2) + pointwise 1x1 + BN + ReLU.

    Stride 2 halves the spatial dims (the coarse-feature generator);
    stride 1 preserves them (the adapter feeding the decoder).
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng=None):
        super().__init__()
        self.stride = stride
        self.depthwise = Conv2d(
            in_channels, in_channels, 3, stride=stride, padding=1,
            groups=in_channels, bias=False, rng=rng,
        )
        self.pointwise = Conv2d(in_channels, out_channels, 1, bias=False, rng=rng)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x):
        if self.stride == 2 and (x.shape[2] < 2 or x.shape[3] < 2):
            raise ShapeError(
                f"stride-2 projection needs spatial dims >= 2, got {x.shape}"
            )
        return ops.relu(self.bn(self.pointwise(self.depthwise(x))))


class FeatureRefinement(Module):
    """1x1 then 3x3 conv+BN+ReLU; squeezes the 2-wide concat back to width."""

    def __init__(self, in_channels: int, out_channels: int, rng=None):
        super().__init__()
        self.conv1 = ConvBNReLU(in_channels, out_channels, 1, rng=rng)
        self.conv3 = ConvBNReLU(out_channels, out_channels, 3, rng=rng)

    def forward(self, x):
        return self.conv3(self.conv1(x))


class AuxHead(Module):
    """3x3 conv -> dropout -> 1x1 projection to class logits."""

    def __init__(self, channels: int, num_classes: int, dropout_p: float = 0.1, rng=None):
        super().__init__()
        self.conv = Conv2d(channels, channels, 3, padding=1, bias=True, rng=rng)
        drop_rng = np.random.default_rng(int(rng.integers(2**32))) if rng is not None else None
        self.dropout = Dropout(dropout_p, rng=drop_rng)
        self.proj = Conv2d(channels, num_classes, 1, bias=True, rng=rng)

    def forward(self, x):
        return self.proj(self.dropout(self.conv(x)))


class PyramidStage(Module):
    """One fusion stage: lateral + upsampled coarse -> refine -> two
    attention-gated branches summed, with a deep-supervision head.

    Branch A re-weights the lateral path per channel; branch B modulates
    the coarse path with the row-strip attention over the refined feature.
    """

    def __init__(
        self,
        level: int,
        lateral_channels: int,
        coarse_channels: int,
        width: int,
        num_classes: int,
        dropout_p: float = 0.1,
        rng=None,
    ):
        super().__init__()
        self.level = level
        self.width = width
        self.lateral = ConvBNReLU(lateral_channels, width, 1, rng=rng)
        self.coarse_proj = Conv2d(coarse_channels, width, 1, bias=True, rng=rng)
        self.frb = FeatureRefinement(2 * width, width, rng=rng)
        self.crb_conv = ConvBNReLU(width, width, 3, rng=rng)
        self.coarse_conv = Conv2d(width, width, 3, padding=1, bias=True, rng=rng)
        self.cam = ChannelAttention(width, rng=rng)
        self.ssam = StripAttention(width, rng=rng)
        self.head = AuxHead(width, num_classes, dropout_p, rng=rng)
        self.next_refine = Conv2d(width, width, 3, padding=1, bias=True, rng=rng)

    def forward(self, coarse, low, return_intermediates: bool = False):
        if coarse.shape[2] > low.shape[2] or coarse.shape[3] > low.shape[3]:
            raise ShapeError(
                f"coarse feature {coarse.shape} larger than lateral feature {low.shape} "
                f"at pyramid level {self.level}"
            )
        lat = self.lateral(low)
        up = ops.bilinear_upsample(coarse, low.shape[2], low.shape[3])
        up = self.coarse_proj(up)
        if up.shape[2:] != lat.shape[2:]:
            raise ShapeError(
                f"upsampled coarse {up.shape} does not match lateral {lat.shape} "
                f"at pyramid level {self.level}"
            )
        refined = self.frb(ops.concat([up, lat], axis=1))
        gate = self.cam(refined)
        x_a = self.crb_conv(lat) * gate
        x_b = self.coarse_conv(up) * self.ssam(refined)
        fused = x_a + x_b
        aux = self.head(fused)
        out = self.next_refine(fused)
        if return_intermediates:
            return out, aux, {
                "lateral": lat,
                "upsampled": up,
                "refined": refined,
                "channel_gate": gate,
                "x_a": x_a,
                "x_b": x_b,
                "fused": fused,
            }
        return out, aux


class AttentionPyramid(Module):
    """Levels 5 down to 2; level 5 consumes the stride-2 coarse seed, each
    later level consumes the previous level's refined output."""

    def __init__(self, widths: dict[int, int], num_classes: int, dropout_p: float = 0.1, rng=None):
        super().__init__()
        coarse_channels = widths[5]  # the seed projection already emits this width
        for level in (5, 4, 3, 2):
            stage = PyramidStage(
                level,
                LATERAL_CHANNELS[level],
                coarse_channels,
                widths[level],
                num_classes,
                dropout_p,
                rng=rng,
            )
            setattr(self, str(level), stage)
            coarse_channels = widths[level]

    def stage(self, level: int) -> PyramidStage:
        return self._modules[str(level)]

    def forward(self, hierarchy, coarse_seed):
        laterals = {2: hierarchy.f2, 3: hierarchy.f3, 4: hierarchy.f4, 5: hierarchy.f5}
        coarse = coarse_seed
        outputs: dict[int, object] = {}
        aux: dict[int, object] = {}
        for level in (5, 4, 3, 2):
            coarse, aux[level] = self.stage(level)(coarse, laterals[level])
            outputs[level] = coarse
        # aux logits ordered fine-to-coarse (strides 4, 8, 16, 32 on the
        # standard backbones)
        return outputs, [aux[2], aux[3], aux[4], aux[5]]
