"""Confusion counts, per-class IoU, and mIoU.

counts[i][j] is the number of pixels of true class i predicted as class j.
IoU_i = p_ii / (row_i + col_i - p_ii); classes absent from both prediction
and ground truth have a zero denominator, are reported as None, and are
excluded from the mean.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluationError, LabelError, ShapeError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64

    @classmethod
    def zeros(cls, num_classes):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def merge(self, other):
        if other.counts.shape != self.counts.shape:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)

    def add(self, pred, gt):
        """Accumulate one image in place."""
        self.counts += confusion_matrix(pred, gt, self.num_classes).counts
        return self


def confusion_matrix(pred, gt, num_classes):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    pred = pred.astype(np.int64).ravel()
    gt = gt.astype(np.int64).ravel()
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"{name} contains class ids outside [0, {num_classes})")
    counts = np.bincount(gt * num_classes + pred, minlength=num_classes**2)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


@dataclass
class MetricsReport:
    per_class_iou: list  # float per class, None where the class is absent
    miou: float
    pixel_accuracy: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "metadata": self.metadata,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "iou", "config_hash", "seed"])
            chash = self.metadata.get("config_hash", "")
            seed = self.metadata.get("seed", "")
            for c, iou in enumerate(self.per_class_iou):
                writer.writerow([c, "" if iou is None else f"{iou:.6f}", chash, seed])
            writer.writerow(["miou", f"{self.miou:.6f}", chash, seed])
            writer.writerow(["pixel_accuracy", f"{self.pixel_accuracy:.6f}", chash, seed])


def iou_report(cm, metadata=None):
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    diag = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - diag
    per_class = [
        float(diag[i] / denom[i]) if denom[i] > 0 else None
        for i in range(cm.num_classes)
    ]
    present = [v for v in per_class if v is not None]
    if not present:
        raise EmptyEvaluationError("no class present in prediction or ground truth")
    return MetricsReport(
        per_class_iou=per_class,
        miou=float(np.mean(present)),
        pixel_accuracy=float(diag.sum() / total),
        metadata=dict(metadata or {}),
    )
