"""Layer/module abstraction: parameter registration, modes, state dicts."""

from __future__ import annotations

import numpy as np

from . import ops
from .counting import current_counter
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, default_dtype


class Module:
    """Base class with automatic registration of parameters and children.

    Dotted names produced by `named_parameters`/`state_entries` are what the
    checkpoint format stores, so attribute names are part of the interface.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        tensor = Tensor(value, requires_grad=False, dtype=np.asarray(value).dtype.type)
        self._buffers[name] = tensor
        object.__setattr__(self, name, tensor)

    def modules(self):
        yield self
        for child in self._modules.values():
            yield from child.modules()

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._modules.items():
            child_prefix = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(child_prefix)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}.{name}" if prefix else name), p
        for name, child in self._modules.items():
            child_prefix = f"{prefix}.{name}" if prefix else name
            yield from child.named_parameters(child_prefix)

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield (f"{prefix}.{name}" if prefix else name), b
        for name, child in self._modules.items():
            child_prefix = f"{prefix}.{name}" if prefix else name
            yield from child.named_buffers(child_prefix)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def assign_parameter_names(self, prefix: str = "") -> None:
        """Stamp each Parameter with its dotted name (checkpoint identity)."""
        for name, p in self.named_parameters(prefix):
            p.name = name

    def state_entries(self, prefix: str = ""):
        """(name, array, is_parameter) for every parameter and buffer."""
        for name, p in self.named_parameters(prefix):
            yield name, p.data, True
        for name, b in self.named_buffers(prefix):
            yield name, b.data, False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: arr for name, arr, _ in self.state_entries()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = False):
        """Copy name-matched arrays into parameters/buffers.

        Returns (loaded_names, missing_in_state, unexpected_in_state).
        Shape mismatches always raise, naming the offending tensor.
        """
        own: dict[str, Tensor] = {}
        for name, p in self.named_parameters():
            own[name] = p
        for name, b in self.named_buffers():
            own[name] = b
        loaded, missing, unexpected = [], [], []
        for name, target in own.items():
            if name not in state:
                missing.append(name)
        for name, arr in state.items():
            target = own.get(name)
            if target is None:
                unexpected.append(name)
                continue
            arr = np.asarray(arr)
            if int(np.prod(arr.shape)) != target.size or _pad4(arr.shape) != _pad4(target.shape):
                raise ShapeError(
                    f"cannot load {name!r}: checkpoint shape {tuple(arr.shape)} "
                    f"vs model shape {tuple(target.shape)}"
                )
            target.data[...] = arr.reshape(target.shape).astype(target.dtype)
            loaded.append(name)
        if strict and (missing or unexpected):
            raise ShapeError(
                f"state mismatch: missing={missing} unexpected={unexpected}"
            )
        return loaded, missing, unexpected

    def train(self, flag: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        counter = current_counter()
        if counter is None:
            return self.forward(*args, **kwargs)
        counter.enter(self)
        try:
            return self.forward(*args, **kwargs)
        finally:
            counter.leave()


def _pad4(shape) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in shape)
    if len(dims) > 4:
        raise ShapeError(f"tensors above rank 4 are not supported, got {dims}")
    return (1,) * (4 - len(dims)) + dims


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(default_dtype())


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"groups={groups} must divide channels ({in_channels} -> {out_channels})"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.groups = groups
        rng = rng or np.random.default_rng(0)
        fan_in = (in_channels // groups) * kernel * kernel
        self.weight = Parameter(
            he_normal(rng, (out_channels, in_channels // groups, kernel, kernel), fan_in)
        )
        if bias:
            self.bias = Parameter(np.zeros(out_channels, dtype=default_dtype()))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups
        )


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        dt = default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dt))
        self.beta = Parameter(np.zeros(channels, dtype=dt))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dt))
        self.register_buffer("running_var", np.ones(channels, dtype=dt))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            mode="train" if self.training else "eval",
            momentum=self.momentum,
            eps=self.eps,
        )


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(x)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator | None = None):
        super().__init__()
        self.p = p
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x: Tensor) -> Tensor:
        mode = "train" if self.training else "eval"
        return ops.dropout(x, self.p, mode=mode, rng=self.rng)


class MaxPool2d(Module):
    def __init__(self, kernel: int, stride: int, padding: int = 0):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_pool(x, self.kernel, self.stride, self.padding)


class ConvBNReLU(Module):
    """conv (no bias) -> batch norm -> relu, the dominant composite."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if padding is None:
            padding = kernel // 2
        self.conv = Conv2d(
            in_channels, out_channels, kernel, stride=stride, padding=padding,
            groups=groups, bias=False, rng=rng,
        )
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))
