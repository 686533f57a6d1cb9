"""Strip-attention feature pyramid network on a minimal numpy autodiff core."""

from . import ops  # installs Tensor operator sugar
from .tensor import Parameter, Tape, Tensor, no_grad, set_debug_checks, tape, using_dtype

__all__ = [
    "ops",
    "Parameter",
    "Tape",
    "Tensor",
    "no_grad",
    "set_debug_checks",
    "tape",
    "using_dtype",
]

__version__ = "0.1.0"
