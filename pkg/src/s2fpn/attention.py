"""Strip attention (row-wise, vertical-axis) and channel attention blocks."""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Module
from .tensor import Parameter, Tensor, default_dtype


class StripAttention(Module):
    """Pools each row to an (N, C, H, 1) strip twice (average and max),
    pushes both strips through one shared 1x1 convolution, forms a softmax
    attention over the vertical axis from their product, and re-injects the
    scaled strip residually.

    The residual mix is `alpha * scaled + (1 - alpha) * x` with a learnable
    scalar alpha initialized to zero, so a freshly built block is the
    identity. `duplicate_max_term` switches the scaled strip from
    A*f1 + A*f2 to A*f2 + A*f2 (ablation variant).
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator | None = None,
        duplicate_max_term: bool = False,
    ):
        super().__init__()
        self.channels = channels
        self.duplicate_max_term = duplicate_max_term
        self.shared_conv = Conv2d(channels, channels, 1, bias=True, rng=rng)
        self.alpha = Parameter(np.zeros((), dtype=default_dtype()))

    def forward(self, x: Tensor, return_intermediates: bool = False):
        if x.shape[1] != self.channels:
            raise ConfigError(
                f"strip attention built for {self.channels} channels, got input {x.shape}"
            )
        z_avg = ops.strip_pool(x, "avg")
        z_max = ops.strip_pool(x, "max")
        f1 = self.shared_conv(z_avg)
        f2 = self.shared_conv(z_max)
        attention = ops.softmax(f1 * f2, "H")
        first = f2 if self.duplicate_max_term else f1
        scaled = attention * first + attention * f2
        # alpha * scaled + (1 - alpha) * x, written so every term is batched
        out = x + self.alpha * (scaled - x)
        if return_intermediates:
            return out, {
                "z_avg": z_avg,
                "z_max": z_max,
                "f1": f1,
                "f2": f2,
                "attention": attention,
                "scaled": scaled,
            }
        return out


class ChannelAttention(Module):
    """Global average pool -> bottleneck 1x1 convs -> sigmoid gate.

    Produces an (N, C, 1, 1) weight vector with entries strictly in (0, 1).
    """

    def __init__(self, channels: int, reduction: int = 4, rng: np.random.Generator | None = None):
        super().__init__()
        if channels % reduction:
            raise ConfigError(
                f"channel count {channels} must be divisible by reduction {reduction}"
            )
        self.channels = channels
        self.reduction = reduction
        self.squeeze_conv = Conv2d(channels, channels // reduction, 1, bias=True, rng=rng)
        self.excite_conv = Conv2d(channels // reduction, channels, 1, bias=True, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ConfigError(
                f"channel attention built for {self.channels} channels, got input {x.shape}"
            )
        pooled = ops.global_avg_pool(x)
        return ops.sigmoid(self.excite_conv(ops.relu(self.squeeze_conv(pooled))))
