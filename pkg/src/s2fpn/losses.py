"""Hard-pixel-mined cross-entropy and the deep-supervision total loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import Tensor, as_tensor, grad_enabled, tape

log = logging.getLogger(__name__)


@dataclass
class OhemConfig:
    threshold: float = 0.7
    min_kept: int = 1
    ignore_index: int = 255

    @staticmethod
    def for_crop(crop_h: int, crop_w: int, threshold: float = 0.7, ignore_index: int = 255) -> "OhemConfig":
        # keep-floor scales with the crop: 1/16 of its pixels
        return OhemConfig(threshold, max(1, crop_h * crop_w // 16), ignore_index)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ohem_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    threshold: float = 0.7,
    min_kept: int = 1,
    ignore_index: int = 255,
    return_details: bool = False,
):
    """Mean cross-entropy over mined pixels.

    A pixel is hard when the probability of its true class falls below
    `threshold`; if fewer than `min_kept` pixels qualify, the `min_kept`
    lowest-probability pixels are kept instead. Ignored pixels are dropped
    before mining. With every pixel ignored the loss is a defined zero and
    a warning is logged.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    labels = labels.astype(np.int64)
    valid = labels != ignore_index
    flat_valid = valid.reshape(-1)
    selected = np.zeros_like(flat_valid)
    safe_labels = np.where(valid, labels, 0)
    logp = _log_softmax(logits.data)
    logp_true = np.take_along_axis(logp, safe_labels[:, None], axis=1)[:, 0]
    p_true = np.exp(logp_true)
    n_valid = int(flat_valid.sum())
    all_ignored = n_valid == 0
    if all_ignored:
        log.warning("ohem_cross_entropy: every pixel carries the ignore label")
        loss_value = np.zeros((), dtype=logits.dtype)
    else:
        flat_p = p_true.reshape(-1)
        hard = flat_valid & (flat_p < threshold)
        n_hard = int(hard.sum())
        if n_hard >= min_kept:
            selected = hard
        else:
            order = np.argsort(np.where(flat_valid, flat_p, np.inf), kind="stable")
            keep = order[: min(min_kept, n_valid)]
            selected[keep] = True
        n_sel = int(selected.sum())
        loss_value = np.asarray(
            -(logp_true.reshape(-1)[selected]).sum() / n_sel, dtype=logits.dtype
        )

    needs_grad = grad_enabled() and logits.requires_grad
    loss = Tensor(loss_value, requires_grad=needs_grad, dtype=logits.dtype.type)
    if needs_grad and not all_ignored:
        sel_map = selected.reshape(n, h, w)
        n_sel = int(selected.sum())

        def backward(g):
            probs = np.exp(logp)
            grad = probs
            np.put_along_axis(
                grad,
                safe_labels[:, None],
                np.take_along_axis(grad, safe_labels[:, None], axis=1) - 1.0,
                axis=1,
            )
            grad *= (sel_map[:, None] * (g / n_sel)).astype(grad.dtype)
            return (np.ascontiguousarray(grad),)

        tape().record(loss, (logits,), backward)
    if return_details:
        return loss, {
            "selected": selected.reshape(n, h, w),
            "true_class_prob": p_true,
            "num_selected": int(selected.sum()),
            "num_valid": n_valid,
            "all_ignored": all_ignored,
        }
    return loss


def cross_entropy(logits, labels, ignore_index: int = 255):
    """Plain mean cross-entropy over valid pixels (threshold above 1 keeps
    every valid pixel, so mining degenerates to the full mean)."""
    return ohem_cross_entropy(
        logits, labels, threshold=2.0, min_kept=1, ignore_index=ignore_index
    )


def total_loss(
    main_logits: Tensor,
    aux_logits: list[Tensor],
    labels: np.ndarray,
    ohem: OhemConfig,
    aux_weight: float = 0.4,
    aux_ohem: bool = True,
    return_terms: bool = False,
):
    """main + aux_weight * sum(aux), every aux upsampled to label size first."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    h, w = labels.shape[-2:]
    main_term = ohem_cross_entropy(
        main_logits, labels, ohem.threshold, ohem.min_kept, ohem.ignore_index
    )
    terms = [main_term]
    loss = main_term
    for aux in aux_logits:
        if aux.shape[2] != h or aux.shape[3] != w:
            aux = ops.bilinear_upsample(aux, h, w)
        if aux_ohem:
            term = ohem_cross_entropy(
                aux, labels, ohem.threshold, ohem.min_kept, ohem.ignore_index
            )
        else:
            term = cross_entropy(aux, labels, ohem.ignore_index)
        terms.append(term)
        loss = loss + aux_weight * term
    if return_terms:
        return loss, terms
    return loss
