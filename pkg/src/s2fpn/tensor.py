"""Dense NCHW tensors with a recording tape for reverse-mode differentiation.

Values live in contiguous row-major numpy arrays (float32 by default,
float64 selectable for verification work). Differentiable kernels in
:mod:`s2fpn.ops` append records to the active tape; replaying the tape in
reverse propagates gradients into every reachable leaf tensor.

A tape (and the parameters trained through it) is confined to one logical
thread; each thread gets its own tape lazily.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import NumericCheckError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_default_dtype = np.float32
_debug_checks = False
_local = threading.local()


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness assertions after every kernel (off by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def check_output(data: np.ndarray, op: str) -> None:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericCheckError(f"non-finite values produced by {op}")


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (inference / benchmarks)."""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations.

    Execution order is a topological order of the graph, so walking the
    records backwards visits every operation after all of its consumers.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: "Tensor", inputs, backward) -> None:
        self._records.append(_Record(out, tuple(inputs), backward))

    def reset(self) -> None:
        self._records.clear()

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

        Calling twice on the same tape doubles the accumulators.
        """
        if loss.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        produced = {id(rec.out) for rec in self._records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            input_grads = rec.backward(g)
            for tensor, grad in zip(rec.inputs, input_grads):
                if tensor is None or grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if key not in produced:
                    leaves[key] = tensor
        for key, tensor in leaves.items():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            tensor.grad += grads[key]


def tape() -> Tape:
    current = getattr(_local, "tape", None)
    if current is None:
        current = Tape()
        _local.tape = current
    return current


class Tensor:
    """A dense array value, optionally tracked for differentiation.

    Feature maps follow the (N, C, H, W) layout; reductions may produce
    lower-rank tensors (losses are 0-d). `grad`, when populated, is a numpy
    buffer of the same shape as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES else _default_dtype
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        tape().backward(self)

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad_flag})"

    # arithmetic sugar is installed by s2fpn.ops at import time


class Parameter(Tensor):
    """A trainable leaf tensor with a zero-initialized gradient accumulator.

    `name` is assigned when the parameter is registered on a module and is
    unique within a model, which is what makes checkpoints round-trip.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def __repr__(self) -> str:
        label = self.name or "<unnamed>"
        return f"Parameter({label}, shape={self.shape}, dtype={self.data.dtype})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), requires_grad=False, dtype=dtype)
