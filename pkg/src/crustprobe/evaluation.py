"""Dataset splitting, confusion matrices, and accuracy metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .synth import SeafloorClass

CLASS_ORDER = [SeafloorClass.MN_CRUST, SeafloorClass.SEDIMENT, SeafloorClass.NODULES]


@dataclass(frozen=True)
class DatasetSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    ratio: float
    seed: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.ratio == other.ratio
            and self.seed == other.seed
            and np.array_equal(self.train_indices, other.train_indices)
            and np.array_equal(self.test_indices, other.test_indices)
        )


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def split(
    n: int,
    ratio: float = 0.7,
    seed: int = 0,
    labels: Optional[np.ndarray] = None,
    stratified: bool = False,
) -> DatasetSplit:
    """Seeded uniform shuffle followed by a prefix split.

    The train size is round-half-up of ratio * n. With stratified=True the
    split preserves per-class proportions instead (requires labels).
    """
    if n < 2:
        raise ValidationError("split requires at least 2 samples")
    if not 0 < ratio < 1:
        raise ValidationError("ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    if stratified:
        if labels is None:
            raise ValidationError("stratified split requires labels")
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValidationError(f"labels must have shape ({n},)")
        train_parts, test_parts = [], []
        for value in np.unique(labels):
            idx = np.flatnonzero(labels == value)
            perm = idx[rng.permutation(idx.size)]
            k = _round_half_up(ratio * idx.size)
            train_parts.append(perm[:k])
            test_parts.append(perm[k:])
        train = np.sort(np.concatenate(train_parts))
        test = np.sort(np.concatenate(test_parts))
    else:
        perm = rng.permutation(n)
        k = _round_half_up(ratio * n)
        train = np.sort(perm[:k])
        test = np.sort(perm[k:])
    return DatasetSplit(train, test, ratio, seed)


@dataclass
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predictions."""

    counts: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(
    true_labels: Sequence[SeafloorClass], predicted: Sequence[SeafloorClass]
) -> tuple[ConfusionMatrix, dict[str, float]]:
    """Exact confusion counts plus overall and per-class metrics.

    Per-class recall is diagonal over row sum and precision diagonal over
    column sum; each class's diagonal share of the total is reported as well,
    so both common reading conventions of a confusion matrix are available.
    """
    true_arr = np.asarray([int(v) for v in true_labels], dtype=np.int64)
    pred_arr = np.asarray([int(v) for v in predicted], dtype=np.int64)
    if true_arr.shape != pred_arr.shape:
        raise ValidationError(
            f"label arrays differ in length: {true_arr.shape[0]} vs {pred_arr.shape[0]}"
        )
    if true_arr.size == 0:
        raise ValidationError("confusion requires at least one sample")
    for arr, what in ((true_arr, "true"), (pred_arr, "predicted")):
        if arr.min() < 0 or arr.max() >= len(CLASS_ORDER):
            raise ValidationError(f"{what} labels contain values outside the class set")

    k = len(CLASS_ORDER)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true_arr, pred_arr), 1)
    matrix = ConfusionMatrix(counts)

    total = counts.sum()
    metrics: dict[str, float] = {
        "n_total": float(total),
        "overall_accuracy": float(np.trace(counts) / total),
    }
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    for i, cls in enumerate(CLASS_ORDER):
        name = cls.display_name.lower()
        metrics[f"recall_{name}"] = (
            float(counts[i, i] / row_sums[i]) if row_sums[i] > 0 else float("nan")
        )
        metrics[f"precision_{name}"] = (
            float(counts[i, i] / col_sums[i]) if col_sums[i] > 0 else float("nan")
        )
        metrics[f"diag_share_{name}"] = float(counts[i, i] / total)
        metrics[f"n_true_{name}"] = float(row_sums[i])
    return matrix, metrics


# ---------------------------------------------------------------------------
# Confusion CSV and metrics file
# ---------------------------------------------------------------------------


def write_confusion_csv(matrix: ConfusionMatrix, path) -> None:
    names = [c.display_name for c in CLASS_ORDER]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted"] + names)
        for i, name in enumerate(names):
            writer.writerow([name] + [int(v) for v in matrix.counts[i]])


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[1:] != [c.display_name for c in CLASS_ORDER]:
            raise FormatError(f"unexpected confusion header {header!r} in {path}")
        rows = [[int(v) for v in row[1:]] for row in reader]
    counts = np.array(rows, dtype=np.int64)
    if counts.shape != (len(CLASS_ORDER), len(CLASS_ORDER)):
        raise FormatError(f"confusion matrix in {path} has shape {counts.shape}")
    return ConfusionMatrix(counts)


def write_metrics(metrics: dict[str, float], path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics(path) -> dict[str, float]:
    with open(path) as fh:
        return json.load(fh)
