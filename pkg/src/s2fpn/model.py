"""The full segmentation network: backbone, attention pyramid, decoder."""

from __future__ import annotations

import numpy as np

from .backbone import STAGE_WIDTHS, build_backbone
from .decoder import GlobalFeatureUpsample, SegHead
from .errors import ConfigError
from .nn import Module
from .pyramid import AttentionPyramid, DepthwiseProjection
from .tensor import Tensor, no_grad


def pyramid_widths(top_width: int) -> dict[int, int]:
    """Per-level fusion widths: halved at each finer level.

    Compute at the fine, high-resolution levels is what dominates the
    budget, so the pyramid narrows top-down; `top_width` must be divisible
    by 32 so the narrowest level still splits into attention bottlenecks.
    """
    if top_width % 32:
        raise ConfigError(f"pyramid width must be divisible by 32, got {top_width}")
    return {5: top_width, 4: top_width // 2, 3: top_width // 4, 2: top_width // 8}


class S2FPN(Module):
    """Backbone taps f2..f5 feed a top-down attention pyramid seeded by a
    stride-2 depthwise projection of f5; a stride-1 projection of f5 meets
    the finest pyramid output in the decoder, and a 1x1 classifier maps the
    result to full-resolution logits.

    Training-mode forward returns (main_logits, [aux_2, aux_3, aux_4,
    aux_5]) with the aux logits left at their pyramid resolutions;
    eval-mode forward returns the main logits only.
    """

    def __init__(
        self,
        backbone: str = "r18",
        pyramid_width: int = 320,
        num_classes: int = 19,
        dropout_p: float = 0.1,
        seed: int = 0,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.pyramid_width = pyramid_width
        widths = pyramid_widths(pyramid_width)
        self.backbone = build_backbone(backbone, rng)
        deep = STAGE_WIDTHS[-1]
        self.cfgb = DepthwiseProjection(deep, widths[5], stride=2, rng=rng)
        self.fab = DepthwiseProjection(deep, widths[2], stride=1, rng=rng)
        self.apf = AttentionPyramid(widths, num_classes, dropout_p, rng=rng)
        self.gfu = GlobalFeatureUpsample(widths[2], rng=rng)
        self.head = SegHead(widths[2], num_classes, rng=rng)
        self.register_buffer("input_mean", np.zeros((1, 3, 1, 1), dtype=np.float32))
        self.register_buffer("input_std", np.ones((1, 3, 1, 1), dtype=np.float32))
        self.assign_parameter_names()

    def forward(self, x: Tensor):
        n, c, h, w = x.shape
        features = self.backbone(x)
        coarse_seed = self.cfgb(features.f5)
        pyramid_outs, aux_logits = self.apf(features, coarse_seed)
        adapted = self.fab(features.f5)
        fused = self.gfu(adapted, pyramid_outs[2])
        main = self.head(fused, h, w)
        if self.training:
            return main, aux_logits
        return main


def model_forward(model: S2FPN, x: Tensor, mode: str = "eval"):
    """Run a forward pass in the requested mode, restoring the previous one.

    Train mode returns (main_logits, aux_logits); eval mode returns the
    main logits only and skips tape recording.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    was_training = model.training
    model.train(mode == "train")
    try:
        if mode == "eval":
            with no_grad():
                return model(x)
        return model(x)
    finally:
        model.train(was_training)
