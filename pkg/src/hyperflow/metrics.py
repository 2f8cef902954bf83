"""Segmentation metrics: confusion matrices and intersection over union."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def per_class_error(self) -> np.ndarray:
        """1 - diag / rowsum; NaN for classes absent from the ground truth."""
        rows = self.support.astype(np.float64)
        diag = np.diag(self.counts).astype(np.float64)
        err = np.full(self.n_classes, np.nan)
        ok = rows > 0
        err[ok] = 1.0 - diag[ok] / rows[ok]
        return err

    @property
    def overall_error(self) -> float:
        total = self.counts.sum()
        return float(1.0 - np.trace(self.counts) / total) if total else float("nan")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise DimensionError("confusion matrices differ in class count")
        return ConfusionMatrix(self.counts + other.counts)


def confusion_matrix(pred, gt, n_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"{name} has class ids outside 0..{n_classes - 1}")
    flat = gt.astype(np.int64).ravel() * n_classes + pred.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionMatrix(counts)


def iou(pred, gt) -> float:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes {pred.shape} and {gt.shape} differ")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def write_confusion_csv(cm: ConfusionMatrix, path, names=None) -> None:
    names = list(names) if names is not None else [str(i) for i in range(cm.n_classes)]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["truth"] + names + ["error"])
        for i, row in enumerate(cm.counts):
            out.writerow([names[i]] + [int(v) for v in row] + [repr(float(cm.per_class_error[i]))])
