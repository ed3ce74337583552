"""Soft Dice + cross-entropy objectives and the multi-head combination."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLabel, ShapeMismatch
from .layers import softmax_backward
from .volume import VALID_LABELS

LOG_CLAMP = 1e-12
# head-gradient entries below this are zeroed (see combined_loss)
GRAD_FLUSH = 1e-100


@dataclass
class LossReport:
    total: float
    per_head: list = field(default_factory=list)  # [(soft_dice_term, cross_entropy), ...]
    step: int = 0


def soft_dice_loss(p, g, eps=1e-5):
    """``1 - (2 sum(p g) + eps) / (sum p + sum g + eps)`` per sample, averaged over the batch.

    Returns ``(loss, dloss/dp)``.
    """
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} and target {g.shape} differ")
    n = p.shape[0]
    axes = tuple(range(1, p.ndim))
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes) + eps
    num = 2.0 * inter + eps
    loss = float(np.mean(1.0 - num / denom))
    shape = (n,) + (1,) * (p.ndim - 1)
    grad = -(2.0 * g * denom.reshape(shape) - num.reshape(shape)) / (denom**2).reshape(shape)
    return loss, grad / n


def cross_entropy_loss(p, target):
    """Mean of ``-log p[target]`` over all voxels.

    ``p`` is (N, K, ...) softmax output and ``target`` (N, ...) class indices.
    The returned gradient is w.r.t. the pre-softmax logits.
    """
    if p.ndim != target.ndim + 1 or p.shape[:1] + p.shape[2:] != target.shape:
        raise ShapeMismatch(f"probabilities {p.shape} incompatible with targets {target.shape}")
    k = p.shape[1]
    idx = target.astype(np.intp)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= k:
        raise InvalidLabel(f"class index outside [0, {k})")
    picked = np.take_along_axis(p, idx[:, None], axis=1)[:, 0]
    n_vox = picked.size
    loss = float(-np.log(np.maximum(picked, LOG_CLAMP)).sum() / n_vox)
    grad = p.copy()
    np.put_along_axis(grad, idx[:, None], np.take_along_axis(grad, idx[:, None], axis=1) - 1.0, axis=1)
    return loss, grad / n_vox


def region_targets(labels):
    """(WT, TC, EN) binary float maps from a {0,1,2,4} label array."""
    return (
        np.isin(labels, (1, 2, 4)).astype(np.float64),
        np.isin(labels, (1, 4)).astype(np.float64),
        (labels == 4).astype(np.float64),
    )


def class_indices(labels):
    """Map labels (0, 1, 2, 4) to channel indices (0, 1, 2, 3)."""
    idx = labels.astype(np.intp)
    return np.where(idx == 4, 3, idx)


def _validate_labels(labels):
    labels = np.asarray(labels)
    if labels.ndim == 5:
        if labels.shape[1] != 1:
            raise ShapeMismatch(f"label tensor must have one channel, got {labels.shape}")
        labels = labels[:, 0]
    if labels.ndim != 4:
        raise ShapeMismatch(f"labels must be (N, 1, D, H, W) or (N, D, H, W), got {labels.shape}")
    bad = np.setdiff1d(np.unique(labels), VALID_LABELS)
    if bad.size:
        raise InvalidLabel(f"label values {bad.tolist()} outside {{0, 1, 2, 4}}")
    return labels


def _binary_head_loss(p, target, eps):
    fg = p[:, 1]
    dice, g_fg = soft_dice_loss(fg, target, eps)
    ce, g_logits = cross_entropy_loss(p, target)
    g_p = np.zeros_like(p)
    g_p[:, 1] = g_fg
    return dice, ce, g_logits + softmax_backward(p, g_p)


def _multiclass_head_loss(p, labels, eps):
    g_p = np.zeros_like(p)
    dice_terms = []
    for ch, lab in enumerate((1, 2, 4), start=1):
        d, g = soft_dice_loss(p[:, ch], (labels == lab).astype(np.float64), eps)
        dice_terms.append(d)
        g_p[:, ch] = g / 3.0
    ce, g_logits = cross_entropy_loss(p, class_indices(labels))
    return float(np.mean(dice_terms)), ce, g_logits + softmax_backward(p, g_p)


def combined_loss(trace, labels, variant, eps=1e-5):
    """Mean over heads of ``(1 - SoftDice) + CrossEntropy``.

    ``trace`` is a ForwardTrace or a list of head outputs. E1D3 heads are
    scored against the WT, TC, EN regions in that order; 4-class heads
    against the class map. Returns ``(LossReport, head_grads)`` with head
    gradients taken w.r.t. the logits.
    """
    heads = getattr(trace, "head_outputs", trace)
    labels = _validate_labels(labels)
    for h in heads:
        if h.shape[:1] + h.shape[2:] != labels.shape:
            raise ShapeMismatch(f"head {h.shape} does not match labels {labels.shape}")
    if variant == "E1D3":
        if len(heads) != 3:
            raise ShapeMismatch("E1D3 needs three heads")
        parts = [_binary_head_loss(h, t, eps) for h, t in zip(heads, region_targets(labels))]
    else:
        parts = [_multiclass_head_loss(h, labels, eps) for h in heads]
    m = len(parts)
    per_head = [(d, ce) for d, ce, _ in parts]
    total = float(np.mean([d + ce for d, ce in per_head]))
    grads = []
    for _, _, g in parts:
        g = g / m
        # a saturated softmax leaves entries near the subnormal range; they
        # change nothing but make every downstream convolution several times slower
        g[np.abs(g) < GRAD_FLUSH] = 0.0
        grads.append(g)
    return LossReport(total, per_head), grads
