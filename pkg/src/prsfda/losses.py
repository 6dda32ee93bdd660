"""Training objectives over per-pixel probability maps.

Every loss returns a scalar value plus the exact gradient with respect to the
probability map, so the model's backward pass can chain through it. The
positive/negative pair follows the standard one-hot definitions:

    PL:  -log p_y          (cross-entropy toward the label)
    NL:  -log(1 - p_ybar)  (push the complementary class down)

and the masked combination averages (1-M)*PL + lambda*M*NL over all pixels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, LabelError, MaskError, ShapeError
from .numerics import check_probabilities, clamp_probabilities

WEIGHT_MIN = 0.1
WEIGHT_MAX = 10.0


@dataclass(frozen=True)
class ClassWeights:
    """Per-class positive weights, clamped to [0.1, 10]."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("class weights must be finite")
        if w.min() < WEIGHT_MIN - 1e-12 or w.max() > WEIGHT_MAX + 1e-12:
            raise InvalidInputError("class weights outside [0.1, 10.0]")
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, num_classes):
        return cls(np.ones(num_classes))


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_probs: np.ndarray


def class_weights(freqs):
    """Median-frequency balancing: w_c = clamp(median(f) / f_c, 0.1, 10)."""
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInputError("class frequencies must be non-negative")
    if abs(f.sum() - 1.0) > 1e-6:
        raise InvalidInputError(f"class frequencies must sum to 1, got {f.sum()}")
    w = np.median(f) / np.maximum(f, 1e-8)
    return ClassWeights(np.clip(w, WEIGHT_MIN, WEIGHT_MAX))


def _check_map(probs):
    probs = check_probabilities(probs)
    if probs.ndim != 3 or probs.shape[-1] < 2:
        raise ShapeError(f"expected probabilities of shape (H, W, C), got {probs.shape}")
    return probs


def _check_labels(labels, shape_hw, num_classes, name="labels"):
    labels = np.asarray(labels)
    if labels.shape != shape_hw:
        raise ShapeError(f"{name} shape {labels.shape} != image shape {shape_hw}")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"{name} contain class ids outside [0, {num_classes})")
    return labels


def _pl_pixelwise(probs, labels, per_class_weight):
    """Per-pixel weighted CE loss map and its gradient map (no 1/N factor)."""
    p_lab = np.take_along_axis(probs, labels[..., None], axis=2)[..., 0]
    clamped = clamp_probabilities(p_lab)
    w_lab = per_class_weight[labels]
    loss_map = -w_lab * np.log(clamped)
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, labels[..., None], (-w_lab / clamped)[..., None], axis=2)
    return loss_map, grad


def _nl_pixelwise(probs, comp_labels):
    """Per-pixel -log(1 - p_comp) loss map and gradient map (no 1/N factor)."""
    p_comp = np.take_along_axis(probs, comp_labels[..., None], axis=2)[..., 0]
    clamped = clamp_probabilities(1.0 - p_comp)
    loss_map = -np.log(clamped)
    grad = np.zeros_like(probs)
    np.put_along_axis(grad, comp_labels[..., None], (1.0 / clamped)[..., None], axis=2)
    return loss_map, grad


def cbce_loss(probs, labels, weights):
    """Class-balanced cross-entropy: mean of -w_y * log p_y over pixels."""
    probs = _check_map(probs)
    h, w, c = probs.shape
    labels = _check_labels(labels, (h, w), c)
    if weights.w.shape != (c,):
        raise ShapeError(f"weights length {weights.w.shape} != class count {c}")
    n = h * w
    loss_map, grad = _pl_pixelwise(probs, labels, weights.w)
    return LossOutput(float(loss_map.mean()), grad / n)


def pl_ce_loss(probs, labels):
    """Positive-learning cross-entropy toward hard labels."""
    probs = _check_map(probs)
    return cbce_loss(probs, labels, ClassWeights.uniform(probs.shape[-1]))


def nl_loss(probs, comp_labels):
    """Negative-learning loss: mean of -log(1 - p_ybar) over pixels."""
    probs = _check_map(probs)
    h, w, c = probs.shape
    comp = _check_labels(comp_labels, (h, w), c, "complementary labels")
    n = h * w
    loss_map, grad = _nl_pixelwise(probs, comp)
    return LossOutput(float(loss_map.mean()), grad / n)


def msl_loss(probs):
    """Maximum squares loss: mean of -0.5 * sum_c p_c^2; gradient -p/N."""
    probs = _check_map(probs)
    n = probs.shape[0] * probs.shape[1]
    value = float(np.mean(-0.5 * np.sum(probs**2, axis=2)))
    return LossOutput(value, -probs / n)


def entropy_loss(probs):
    """Shannon entropy per pixel, normalized by log C to land in [0, 1]."""
    probs = _check_map(probs)
    h, w, c = probs.shape
    n = h * w
    log_c = np.log(c)
    clamped = clamp_probabilities(probs)
    value = float(np.mean(-np.sum(probs * np.log(clamped), axis=2)) / log_c)
    grad = -(np.log(clamped) + 1.0) / (n * log_c)
    return LossOutput(value, grad)


def plnl_loss(probs, pseudo_labels, comp_labels, invalid_mask, lambda_nl):
    """Masked PL/NL combination: mean over all pixels of
    (1-M)*PL(pseudo) + lambda*M*NL(comp)."""
    probs = _check_map(probs)
    h, w, c = probs.shape
    labels = _check_labels(pseudo_labels, (h, w), c, "pseudo labels")
    comp = _check_labels(comp_labels, (h, w), c, "complementary labels")
    if lambda_nl < 0:
        raise InvalidInputError("lambda_nl must be non-negative")
    mask = np.asarray(invalid_mask, dtype=np.float64)
    if mask.shape != (h, w):
        raise ShapeError(f"mask shape {mask.shape} != image shape {(h, w)}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise MaskError("invalid mask must be binary (0/1)")
    n = h * w
    pl_map, pl_grad = _pl_pixelwise(probs, labels, np.ones(c))
    nl_map, nl_grad = _nl_pixelwise(probs, comp)
    valid = 1.0 - mask
    value = float(np.mean(valid * pl_map + lambda_nl * mask * nl_map))
    grad = (valid[..., None] * pl_grad + lambda_nl * mask[..., None] * nl_grad) / n
    return LossOutput(value, grad)


def masked_pl_loss(probs, labels, valid_mask):
    """Cross-entropy averaged over valid pixels only; invalid pixels dropped.

    Used by the naive self-training baseline. With an all-valid mask this
    reduces to pl_ce_loss.
    """
    probs = _check_map(probs)
    h, w, c = probs.shape
    labels = _check_labels(labels, (h, w), c)
    mask = np.asarray(valid_mask, dtype=np.float64)
    if mask.shape != (h, w):
        raise ShapeError(f"mask shape {mask.shape} != image shape {(h, w)}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise MaskError("valid mask must be binary (0/1)")
    count = mask.sum()
    if count == 0:
        return LossOutput(0.0, np.zeros_like(probs))
    loss_map, grad = _pl_pixelwise(probs, labels, np.ones(c))
    value = float((mask * loss_map).sum() / count)
    return LossOutput(value, mask[..., None] * grad / count)
