"""Decoder: global-context fusion of the adapter feature with the finest
pyramid output, plus the classification head."""

from __future__ import annotations

from . import ops
from .errors import ConfigError
from .nn import Conv2d, ConvBNReLU, Module


class GlobalFeatureUpsample(Module):
    """Upsample the deep adapter feature to the fine pyramid resolution,
    squeeze it to a per-channel global context vector, add that context to
    the projected pyramid feature, and refine.

    `plain_fusion` switches the projection/refinement convs to their bare
    (no BN/ReLU, no context conv) forms for ablation.
    """

    def __init__(self, channels: int, rng=None, plain_fusion: bool = False):
        super().__init__()
        self.channels = channels
        self.plain_fusion = plain_fusion
        self.pre_conv = Conv2d(channels, channels, 1, bias=True, rng=rng)
        self.ctx_conv = Conv2d(channels, channels, 1, bias=True, rng=rng)
        self.apf_conv = ConvBNReLU(channels, channels, 1, rng=rng)
        self.out_conv = ConvBNReLU(channels, channels, 1, rng=rng)

    def forward(self, x_deep, x_pyramid, return_intermediates: bool = False):
        if x_deep.shape[1] != self.channels or x_pyramid.shape[1] != self.channels:
            raise ConfigError(
                f"fusion block built for {self.channels} channels, got "
                f"{x_deep.shape} and {x_pyramid.shape}"
            )
        up = ops.relu(ops.bilinear_upsample(x_deep, x_pyramid.shape[2], x_pyramid.shape[3]))
        pooled = ops.global_avg_pool(self.pre_conv(up))
        if self.plain_fusion:
            fused = pooled + self.apf_conv.conv(x_pyramid)
            return self.out_conv.conv(fused)
        ctx = self.ctx_conv(pooled)
        branch = self.apf_conv(x_pyramid)
        fused = ctx + branch
        out = self.out_conv(fused)
        if return_intermediates:
            return out, {
                "upsampled": up,
                "pooled": pooled,
                "context": ctx,
                "pyramid_branch": branch,
                "fused": fused,
            }
        return out


class SegHead(Module):
    """1x1 classifier at pyramid resolution, bilinearly upsampled to the
    network input resolution."""

    def __init__(self, channels: int, num_classes: int, rng=None):
        super().__init__()
        self.num_classes = num_classes
        self.classifier = Conv2d(channels, num_classes, 1, bias=True, rng=rng)

    def forward(self, x, out_h: int, out_w: int):
        logits = self.classifier(x)
        if logits.shape[2] == out_h and logits.shape[3] == out_w:
            return logits
        return ops.bilinear_upsample(logits, out_h, out_w)
