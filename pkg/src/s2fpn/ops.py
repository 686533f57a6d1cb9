"""Numerical kernels with hand-derived backward passes.

All kernels are deterministic: reductions run in a fixed order (BLAS matmul
plus sequential scatter loops), so identical inputs and seeds give
bit-identical outputs across runs.
"""

from __future__ import annotations

import numpy as np

from .counting import add_flops
from .errors import ShapeError, StateError
from .tensor import Tensor, as_tensor, check_output, grad_enabled, tape

_AXIS_NAMES = {"C": 1, "H": 2, "W": 3}


def _make(data, inputs, backward, op: str) -> Tensor:
    check_output(data, op)
    needs = grad_enabled() and any(
        t is not None and t.requires_grad for t in inputs
    )
    out = Tensor(data, requires_grad=needs, dtype=data.dtype.type)
    if needs:
        tape().record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# broadcasting elementwise arithmetic


def _broadcast_check(a_shape, b_shape):
    rank = max(len(a_shape), len(b_shape))
    pa = (1,) * (rank - len(a_shape)) + tuple(a_shape)
    pb = (1,) * (rank - len(b_shape)) + tuple(b_shape)
    for axis, (da, db) in enumerate(zip(pa, pb)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(
                f"cannot broadcast {tuple(a_shape)} with {tuple(b_shape)}: "
                f"axis {axis} has sizes {da} and {db}"
            )


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    if not grad.flags["C_CONTIGUOUS"]:
        grad = np.ascontiguousarray(grad)
    return grad


def elementwise(a, b, op: str) -> Tensor:
    """Broadcasting add/mul; gradients are summed over broadcast axes."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype.type)
    _broadcast_check(a.shape, b.shape)
    if op == "add":
        data = a.data + b.data

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    elif op == "mul":
        data = a.data * b.data

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    add_flops(data.size)
    return _make(data, (a, b), backward, op)


def add(a, b) -> Tensor:
    return elementwise(a, b, "add")


def mul(a, b) -> Tensor:
    return elementwise(a, b, "mul")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(grads)

    return _make(data, tuple(tensors), backward, "concat")


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)
    data = np.array(x.data.sum(), dtype=x.dtype)

    def backward(g):
        return (np.full_like(x.data, g),)

    add_flops(x.size)
    return _make(data, (x,), backward, "sum")


def tensor_mean(x) -> Tensor:
    x = as_tensor(x)
    data = np.array(x.data.mean(), dtype=x.dtype)

    def backward(g):
        return (np.full_like(x.data, g / x.data.size),)

    add_flops(x.size)
    return _make(data, (x,), backward, "mean")


# ---------------------------------------------------------------------------
# activations


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0)

    def backward(g):
        return (np.ascontiguousarray(g * mask),)

    add_flops(x.size)
    return _make(data, (x,), backward, "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign for stability; exact 0.0/1.0 at extreme logits
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (np.ascontiguousarray(g * out * (1.0 - out)),)

    add_flops(4 * x.size)
    return _make(out, (x,), backward, "sigmoid")


def softmax(x, axis) -> Tensor:
    """Max-subtracted softmax; slices along `axis` sum to one."""
    x = as_tensor(x)
    if isinstance(axis, str):
        try:
            axis = _AXIS_NAMES[axis.upper()]
        except KeyError:
            raise ValueError(f"softmax axis must be C, H, or W, got {axis!r}") from None
    if x.shape[axis] < 1:
        raise ShapeError(f"softmax axis {axis} is empty for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (np.ascontiguousarray((g - inner) * out),)

    add_flops(5 * x.size)
    return _make(out, (x,), backward, "softmax")


def dropout(x, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        data = x.data.copy()

        def backward(g):
            return (g,)

        return _make(data, (x,), backward, "dropout")
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit Generator")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    data = np.where(keep, x.data * scale, 0)

    def backward(g):
        return (np.ascontiguousarray(np.where(keep, g * scale, 0)),)

    add_flops(x.size)
    return _make(data, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# pooling


def _require_nchw(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects an (N, C, H, W) tensor, got shape {x.shape}")


def _sequential_sum(data: np.ndarray, axis: int) -> np.ndarray:
    """Left-to-right accumulation: bit-reproducible and loop-oracle-exact."""
    view = np.moveaxis(data, axis, 0)
    acc = view[0].copy()
    for i in range(1, view.shape[0]):
        acc += view[i]
    return acc


def strip_pool(x, mode: str = "avg") -> Tensor:
    """Reduce each row over the width axis to an (N, C, H, 1) strip."""
    x = as_tensor(x)
    _require_nchw(x, "strip_pool")
    n, c, h, w = x.shape
    if w < 1:
        raise ShapeError(f"strip_pool needs width >= 1, got shape {x.shape}")
    if mode == "avg":
        data = (_sequential_sum(x.data, 3) / w)[..., None]

        def backward(g):
            return (np.ascontiguousarray(np.broadcast_to(g / w, x.shape)),)

    elif mode == "max":
        idx = x.data.argmax(axis=3)
        data = np.take_along_axis(x.data, idx[..., None], axis=3)

        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx[..., None], g, axis=3)
            return (gx,)

    else:
        raise ValueError(f"strip_pool mode must be avg or max, got {mode!r}")
    add_flops(x.size)
    return _make(data, (x,), backward, "strip_pool")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    _require_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h == 0 or w == 0:
        raise ShapeError(f"global_avg_pool needs non-empty spatial dims, got {x.shape}")
    # row sums first, then down the column: matches the nested loop order
    data = (_sequential_sum(_sequential_sum(x.data, 3), 2) / (h * w))[..., None, None]

    def backward(g):
        return (np.ascontiguousarray(np.broadcast_to(g / (h * w), x.shape)),)

    add_flops(x.size)
    return _make(data, (x,), backward, "global_avg_pool")


def max_pool(x, kernel: int, stride: int, padding: int = 0) -> Tensor:
    x = as_tensor(x)
    _require_nchw(x, "max_pool")
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"max_pool window {kernel} does not fit input {x.shape}")
    neg = np.array(-np.inf, dtype=x.dtype)
    padded = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=neg,
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    flat = windows.reshape(n, c, oh, ow, kernel * kernel)
    idx = flat.argmax(axis=4)
    data = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]

    def backward(g):
        gp = np.zeros_like(padded)
        ph = idx // kernel + np.arange(oh)[:, None] * stride
        pw = idx % kernel + np.arange(ow)[None, :] * stride
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(gp, (nn[:, :, None, None], cc[:, :, None, None], ph, pw), g)
        return (np.ascontiguousarray(gp[:, :, padding : padding + h, padding : padding + w]),)

    add_flops(kernel * kernel * data.size)
    return _make(data, (x,), backward, "max_pool")


# ---------------------------------------------------------------------------
# bilinear interpolation (half-pixel source mapping)

_INTERP_CACHE: dict[tuple, np.ndarray] = {}


def interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix realising half-pixel bilinear
    resampling: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to borders."""
    key = (n_in, n_out, np.dtype(dtype).str)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m = m.astype(dtype)
    _INTERP_CACHE[key] = m
    return m


def bilinear_upsample(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    _require_nchw(x, "bilinear_upsample")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got ({out_h}, {out_w})")
    n, c, h, w = x.shape
    mh = interp_matrix(h, out_h, x.dtype)
    mw = interp_matrix(w, out_w, x.dtype)
    data = np.einsum("oh,nchw,pw->ncop", mh, x.data, mw, optimize=True)
    data = np.ascontiguousarray(data)

    def backward(g):
        gx = np.einsum("oh,ncop,pw->nchw", mh, g, mw, optimize=True)
        return (np.ascontiguousarray(gx),)

    add_flops(4 * data.size)
    return _make(data, (x,), backward, "bilinear_upsample")


# ---------------------------------------------------------------------------
# convolution (cross-correlation, no kernel flip)


def _im2col(data: np.ndarray, kh: int, kw: int, stride: int, padding: int, oh: int, ow: int):
    n, c, h, w = data.shape
    if padding:
        data = np.pad(data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (N, C, oH, oW, kh, kw) -> (N, C, kh, kw, oH*oW)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, kh, kw, oh * ow)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int, oh: int, ow: int):
    n, c, h, w = x_shape
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += cols[:, :, i, j]
    if padding:
        return np.ascontiguousarray(padded[:, :, padding : padding + h, padding : padding + w])
    return padded


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with optional channel groups.

    weight: (outC, inC/groups, kH, kW); output height/width follow
    floor((size + 2*padding - kernel) / stride) + 1.
    """
    x = as_tensor(x)
    weight = as_tensor(weight, dtype=x.dtype.type)
    bias = None if bias is None else as_tensor(bias, dtype=x.dtype.type)
    _require_nchw(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d, got shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride/padding ({stride}, {padding})")
    n, c, h, w = x.shape
    out_c, cg, kh, kw = weight.shape
    if groups < 1 or c % groups or out_c % groups:
        raise ShapeError(
            f"groups={groups} must divide in_channels={c} and out_channels={out_c}"
        )
    if cg != c // groups:
        raise ShapeError(
            f"weight shape {weight.shape} does not match input {x.shape} with groups={groups}"
        )
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"bias shape {bias.shape} must be ({out_c},)")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1 or kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} (stride {stride}, padding {padding}) does not fit input {x.shape}"
        )
    og = out_c // groups
    length = oh * ow
    cols = _im2col(x.data, kh, kw, stride, padding, oh, ow)
    cols_g = cols.reshape(n, groups, cg * kh * kw, length)
    w_g = weight.data.reshape(groups, og, cg * kh * kw)
    out = np.matmul(w_g, cols_g)  # (N, groups, og, L)
    out = out.reshape(n, out_c, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, out_c, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g_g = g.reshape(n, groups, og, length)
        grad_w = np.matmul(g_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
        grad_w = np.ascontiguousarray(grad_w.reshape(weight.shape))
        grad_cols = np.matmul(w_g.transpose(0, 2, 1), g_g)
        grad_x = _col2im(
            grad_cols.reshape(n, c, kh, kw, length), x.shape, kh, kw, stride, padding, oh, ow
        )
        grad_b = None if bias is None else np.ascontiguousarray(g.sum(axis=(0, 2, 3)))
        return grad_x, grad_w, grad_b

    out_els = n * out_c * oh * ow
    add_flops(2 * out_els * (cg * kh * kw) + (out_els if bias is not None else 0))
    return _make(out, (x, weight, bias), backward, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode uses batch statistics and updates the running buffers in
    place; eval mode normalizes with the running statistics.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma, dtype=x.dtype.type)
    beta = as_tensor(beta, dtype=x.dtype.type)
    _require_nchw(x, "batch_norm")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batch_norm affine shapes {gamma.shape}/{beta.shape} must be ({c},)"
        )
    shape = (1, c, 1, 1)
    if mode == "train":
        count = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            rm = running_mean.data if isinstance(running_mean, Tensor) else running_mean
            rv = running_var.data if isinstance(running_var, Tensor) else running_var
            rm *= 1.0 - momentum
            rm += momentum * mean.astype(rm.dtype)
            rv *= 1.0 - momentum
            rv += momentum * var.astype(rv.dtype)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        def backward(g):
            grad_beta = np.ascontiguousarray(g.sum(axis=(0, 2, 3)))
            grad_gamma = np.ascontiguousarray((g * xhat).sum(axis=(0, 2, 3)))
            sum_g = grad_beta.reshape(shape)
            sum_gx = grad_gamma.reshape(shape)
            coeff = gamma.data.reshape(shape) * inv_std.reshape(shape)
            grad_x = coeff * (g - sum_g / count - xhat * sum_gx / count)
            return np.ascontiguousarray(grad_x), grad_gamma, grad_beta

    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise StateError("eval-mode batch_norm requires initialized running statistics")
        rm = running_mean.data if isinstance(running_mean, Tensor) else np.asarray(running_mean)
        rv = running_var.data if isinstance(running_var, Tensor) else np.asarray(running_var)
        if rm.shape != (c,) or rv.shape != (c,):
            raise ShapeError(f"running stat shapes {rm.shape}/{rv.shape} must be ({c},)")
        inv_std = 1.0 / np.sqrt(rv.astype(x.dtype) + eps)
        xhat = (x.data - rm.astype(x.dtype).reshape(shape)) * inv_std.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        def backward(g):
            grad_beta = np.ascontiguousarray(g.sum(axis=(0, 2, 3)))
            grad_gamma = np.ascontiguousarray((g * xhat).sum(axis=(0, 2, 3)))
            grad_x = g * (gamma.data.reshape(shape) * inv_std.reshape(shape))
            return np.ascontiguousarray(grad_x), grad_gamma, grad_beta

    else:
        raise ValueError(f"batch_norm mode must be train or eval, got {mode!r}")
    add_flops(2 * x.size)
    return _make(np.ascontiguousarray(out), (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# operator sugar on Tensor


def _neg(self):
    return mul(self, -1.0)


def _sub(self, other):
    return add(self, mul(other, -1.0))


def _rsub(self, other):
    return add(mul(self, -1.0), other)


Tensor.__add__ = add
Tensor.__radd__ = add
Tensor.__mul__ = mul
Tensor.__rmul__ = mul
Tensor.__neg__ = _neg
Tensor.__sub__ = _sub
Tensor.__rsub__ = _rsub
Tensor.sum = tensor_sum
Tensor.mean = tensor_mean
