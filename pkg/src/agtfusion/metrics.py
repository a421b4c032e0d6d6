"""Confusion matrices, F1 scores and train/test label-distribution reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .data import NUM_CLASSES, Dataset, EmotionLabel
from .errors import ConfigError, DataError

__all__ = [
    "ConfusionMatrix",
    "confusion_matrix",
    "f1_scores",
    "DistributionReport",
    "distribution_report",
    "write_f1_report",
]

AVERAGINGS = ("weighted", "macro", "per_class")


def _align(preds, truths) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, Mapping) != isinstance(truths, Mapping):
        raise DataError("preds and truths must both be id-keyed mappings or both be sequences")
    if isinstance(preds, Mapping):
        missing_p = sorted(set(truths) - set(preds))
        missing_t = sorted(set(preds) - set(truths))
        if missing_p or missing_t:
            raise DataError(
                f"prediction/truth ids differ: missing predictions {missing_p[:10]}, missing truths {missing_t[:10]}"
            )
        keys = sorted(truths)
        preds = [preds[k] for k in keys]
        truths = [truths[k] for k in keys]
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} predictions for {len(truths)} truths")
    if any(t is None for t in truths):
        raise DataError("every truth must be labeled")
    p = np.array([int(EmotionLabel.parse(x)) for x in preds], dtype=np.int64)
    t = np.array([int(EmotionLabel.parse(x)) for x in truths], dtype=np.int64)
    return p, t


@dataclass(frozen=True)
class ConfusionMatrix:
    """6x6 counts; rows are true labels, columns predicted labels."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def precision(self) -> np.ndarray:
        tp = np.diag(self.counts).astype(np.float64)
        col = self.counts.sum(axis=0)
        return np.divide(tp, col, out=np.zeros(NUM_CLASSES), where=col > 0)

    def recall(self) -> np.ndarray:
        tp = np.diag(self.counts).astype(np.float64)
        row = self.counts.sum(axis=1)
        return np.divide(tp, row, out=np.zeros(NUM_CLASSES), where=row > 0)

    def f1(self) -> np.ndarray:
        """Per-class F1 via ``2PR/(P+R)``; 0 where ``P+R == 0``."""
        p, r = self.precision(), self.recall()
        denom = p + r
        return np.divide(2 * p * r, denom, out=np.zeros(NUM_CLASSES), where=denom > 0)

    def zero_division_classes(self) -> list[EmotionLabel]:
        """Classes whose F1 fell back to 0 because precision + recall was 0."""
        p, r = self.precision(), self.recall()
        return [EmotionLabel(i) for i in range(NUM_CLASSES) if p[i] + r[i] == 0]

    def present(self) -> np.ndarray:
        """Classes occurring among truths or predictions."""
        return (self.counts.sum(axis=0) + self.counts.sum(axis=1)) > 0


def confusion_matrix(preds, truths) -> ConfusionMatrix:
    p, t = _align(preds, truths)
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def f1_scores(preds, truths, averaging: str = "weighted"):
    """F1 of ``preds`` against ``truths``.

    ``preds``/``truths`` are both id-keyed mappings (aligned by id) or both
    equal-length sequences of labels.  ``weighted`` averages per-class F1 by
    true-label support, ``macro`` is the unweighted mean over classes present
    in either truths or predictions, ``per_class`` returns all six scores.
    """
    if averaging not in AVERAGINGS:
        raise ConfigError(f"averaging must be one of {AVERAGINGS}, got {averaging!r}")
    cm = confusion_matrix(preds, truths)
    f1 = cm.f1()
    if averaging == "per_class":
        return f1
    if cm.total == 0:
        raise DataError("cannot score an empty prediction set")
    if averaging == "weighted":
        support = cm.support
        return float((support * f1).sum() / support.sum())
    return float(f1[cm.present()].mean())


def write_f1_report(cm: ConfusionMatrix, path: str | Path) -> None:
    """Per-class precision/recall/F1/support plus weighted and macro rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "precision", "recall", "f1", "support"])
    p, r, f = cm.precision(), cm.recall(), cm.f1()
    for lab in EmotionLabel:
        w.writerow([lab.display, f"{p[lab]:.4f}", f"{r[lab]:.4f}", f"{f[lab]:.4f}", int(cm.support[lab])])
    support = cm.support
    weighted = (support * f).sum() / max(support.sum(), 1)
    macro = f[cm.present()].mean() if cm.present().any() else 0.0
    w.writerow(["weighted", "", "", f"{weighted:.4f}", int(support.sum())])
    w.writerow(["macro", "", "", f"{macro:.4f}", int(support.sum())])
    w.writerow(["zero_division", "", "", len(cm.zero_division_classes()), ""])
    atomic_write_text(path, buf.getvalue())


@dataclass(frozen=True)
class DistributionReport:
    train_values: dict[EmotionLabel, float]
    test_values: dict[EmotionLabel, float]

    @staticmethod
    def _normalise(values: Mapping[EmotionLabel, float]) -> dict[EmotionLabel, float]:
        total = sum(values.values())
        return {lab: values[lab] / total for lab in EmotionLabel}

    @property
    def train(self) -> dict[EmotionLabel, float]:
        return self._normalise(self.train_values)

    @property
    def test(self) -> dict[EmotionLabel, float]:
        return self._normalise(self.test_values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "train_value", "train_proportion", "test_value", "test_proportion"])
        tr, te = self.train, self.test
        for lab in EmotionLabel:
            w.writerow([
                lab.display,
                f"{self.train_values[lab]:g}",
                f"{tr[lab]:.4f}",
                f"{self.test_values[lab]:g}",
                f"{te[lab]:.4f}",
            ])
        return buf.getvalue()


def _values(population, what: str) -> dict[EmotionLabel, float]:
    if isinstance(population, Dataset):
        raw = population.label_counts()
    else:
        raw = {EmotionLabel.parse(k): float(v) for k, v in population.items()}
    values = {lab: float(raw.get(lab, 0.0)) for lab in EmotionLabel}
    if any(v < 0 for v in values.values()):
        raise DataError(f"{what} values must be non-negative")
    if sum(values.values()) == 0:
        raise DataError(f"{what} population is all zero")
    return values


def distribution_report(train: Dataset | Mapping, test_estimate: Mapping) -> DistributionReport:
    """Normalise train counts and test-set weights to per-label proportions.

    ``test_estimate`` values are treated as unnormalised weights.
    """
    return DistributionReport(_values(train, "train"), _values(test_estimate, "test estimate"))
