"""Shared helpers: random probability maps, brute-force IoU oracle, tiny configs."""

import numpy as np
import pytest

from prsfda.data import DomainSpec
from prsfda.numerics import softmax
from prsfda.pipeline import PhaseConfig


def random_probs(rng, h, w, c, scale=1.0):
    """Random interior probability map via softmax of bounded logits."""
    return softmax(rng.uniform(-scale, scale, size=(h, w, c)))


def brute_force_iou(pred, gt, num_classes):
    """Independent mIoU oracle: per-class set intersection/union over raw pixels.

    Returns (per_class list with None for absent classes, miou).
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    per_class = []
    for c in range(num_classes):
        in_pred = pred == c
        in_gt = gt == c
        union = int(np.sum(in_pred | in_gt))
        if union == 0:
            per_class.append(None)
            continue
        inter = int(np.sum(in_pred & in_gt))
        per_class.append(inter / union)
    present = [v for v in per_class if v is not None]
    return per_class, (sum(present) / len(present) if present else None)


@pytest.fixture
def tiny_spec():
    """A 16x16, 4-class benchmark that keeps pipeline tests in the seconds range."""
    return DomainSpec(
        height=16,
        width=16,
        num_classes=4,
        class_frequencies=(0.4, 0.3, 0.2, 0.1),
        voronoi_sites=6,
        num_train=6,
        num_eval=4,
        seed=0,
    )


@pytest.fixture
def tiny_cfg():
    return PhaseConfig(
        source_epochs=2,
        adapt_epochs=1,
        selftrain_epochs=1,
        hidden_sizes=(8,),
        seed=0,
    )
