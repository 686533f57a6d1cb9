"""Adam with decoupled weight decay, and the polynomial LR schedule."""

from __future__ import annotations

import warnings

import numpy as np

from .tensor import Parameter


def poly_lr(iteration: int, max_iter: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - iteration/max_iter) ** power, clamped to 0 past the end."""
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    if iteration > max_iter:
        warnings.warn(
            f"poly_lr called past max_iter ({iteration} > {max_iter}); clamping to 0",
            stacklevel=2,
        )
        return 0.0
    return base_lr * (1.0 - iteration / max_iter) ** power


class Adam:
    """Standard bias-corrected Adam; weight decay is decoupled (applied as
    lr * wd * theta directly on the parameter, outside the moments)."""

    def __init__(
        self,
        params,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params: list[Parameter] = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update.astype(p.dtype)

    def state_entries(self):
        """Named arrays for checkpointing alongside the model."""
        yield "optim.step", np.asarray([float(self.step_count)], dtype=np.float64)
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            yield f"optim.{key}.m", self._m[i]
            yield f"optim.{key}.v", self._v[i]

    def load_state(self, entries: dict[str, np.ndarray]) -> None:
        step = entries.get("optim.step")
        if step is not None:
            self.step_count = int(np.asarray(step).reshape(-1)[0])
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            m = entries.get(f"optim.{key}.m")
            v = entries.get(f"optim.{key}.v")
            if m is not None:
                self._m[i][...] = np.asarray(m).reshape(self._m[i].shape)
            if v is not None:
                self._v[i][...] = np.asarray(v).reshape(self._v[i].shape)
