"""Pseudo labels, confidence maps, invalid masks, and complementary labels.

Pseudo labels are the per-pixel argmax of a probability map; pixels whose max
probability falls below the confidence threshold are marked invalid (M = 1)
and receive negative learning instead of positive learning downstream.

Complementary labels are drawn class-consistently: every pixel carrying the
same pseudo label gets the same uniformly drawn wrong class in one call.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError
from .numerics import check_probabilities
from .serialization import read_header, read_tensor, write_header, write_tensor

PSEUDO_MAGIC = "PRSFDAPL1"
DEFAULT_THRESHOLD = 0.6


@dataclass(frozen=True)
class PseudoLabelSet:
    labels: np.ndarray      # (H, W) int64 class ids
    confidence: np.ndarray  # (H, W) max probability at generation time
    invalid_mask: np.ndarray  # (H, W) float {0, 1}; 1 where confidence < threshold
    threshold: float


def make_pseudo_set(probs, threshold=DEFAULT_THRESHOLD):
    """Argmax labels (ties -> lowest class id), max-prob confidence, and mask."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"confidence threshold must lie in (0, 1), got {threshold}")
    probs = check_probabilities(probs)
    if probs.ndim != 3 or probs.shape[-1] < 2:
        raise ShapeError(f"expected probabilities of shape (H, W, C), got {probs.shape}")
    labels = np.argmax(probs, axis=2).astype(np.int64)
    confidence = np.max(probs, axis=2)
    invalid = (confidence < threshold).astype(np.float64)
    return PseudoLabelSet(labels, confidence, invalid, float(threshold))


def complementary_labels(labels, num_classes, rng):
    """One wrong class drawn per class id, applied to all its pixels.

    Loops over every class id in [0, num_classes) and rejection-samples a
    replacement different from it, so the output differs from the input at
    every pixel and rng consumption does not depend on which classes appear.
    """
    if num_classes < 2:
        raise ConfigError("need at least 2 classes to draw complementary labels")
    labels = np.asarray(labels).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels contain class ids outside [0, {num_classes})")
    comp = labels.copy()
    for lab in range(num_classes):
        tmp = int(rng.integers(0, num_classes))
        while tmp == lab:
            tmp = int(rng.integers(0, num_classes))
        comp[labels == lab] = tmp
    return comp


def pseudo_set_hash(ps):
    h = hashlib.sha256()
    for arr in (ps.labels.astype("<f8"), ps.confidence, ps.invalid_mask):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def save_pseudo_set(ps, path, source_checkpoint_hash=""):
    meta = {"threshold": ps.threshold, "source_checkpoint_hash": source_checkpoint_hash}
    with open(path, "wb") as fh:
        write_header(fh, PSEUDO_MAGIC, meta)
        write_tensor(fh, ps.labels.astype(np.float64))
        write_tensor(fh, ps.confidence)
        write_tensor(fh, ps.invalid_mask)


def load_pseudo_set(path):
    with open(path, "rb") as fh:
        meta = read_header(fh, PSEUDO_MAGIC)
        labels = read_tensor(fh).astype(np.int64)
        confidence = read_tensor(fh)
        invalid = read_tensor(fh)
    return PseudoLabelSet(labels, confidence, invalid, float(meta["threshold"]))
