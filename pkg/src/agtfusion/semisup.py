"""Confidence-filtered pseudo-labels, three-way agreement, and the staged
self-training loop.

Stage 1 trains every model on the labeled pool.  Each later stage predicts
on the unlabeled pool with the previous stage's models, keeps samples on
which all three models are confident (``p > threshold``) *and* agree, adds
them to the labeled data and retrains every model from its initial weights.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .data import Dataset, EmotionLabel, PredictionRecord
from .errors import ConfigError, DataError
from .models import Classifier, TrainConfig, predict, train

__all__ = [
    "PseudoLabel",
    "PseudoLabelSet",
    "StageReport",
    "SelfTrainResult",
    "confidence_filter",
    "intersect_pseudo_labels",
    "pseudo_label_dataset",
    "self_train",
    "write_pseudo_labels",
    "MODEL_ROLES",
]

logger = logging.getLogger(__name__)

# Order matters: audio-only, baseline, AGT.
MODEL_ROLES = ("audio", "baseline", "agt")


@dataclass(frozen=True, eq=False)
class PseudoLabel:
    id: str
    label: EmotionLabel
    confidence: float
    probs: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    entries: tuple[PseudoLabel, ...]
    source: str
    threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DataError(f"pseudo-label set {self.source!r} has duplicate id {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> set[str]:
        return {e.id for e in self.entries}

    def as_dict(self) -> dict[str, PseudoLabel]:
        return {e.id: e for e in self.entries}

    def composition(self) -> dict[EmotionLabel, int]:
        counts = {lab: 0 for lab in EmotionLabel}
        for e in self.entries:
            counts[e.label] += 1
        return counts


def confidence_filter(
    preds: Sequence[PredictionRecord], threshold: float = 0.9, source: str = "model"
) -> PseudoLabelSet:
    """Keep predictions whose confidence is *strictly* above ``threshold``.

    ``threshold=1.0`` is accepted and keeps nothing.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"confidence threshold must lie in (0, 1], got {threshold}")
    kept = tuple(
        PseudoLabel(p.id, p.label, p.confidence, p.probs) for p in preds if p.confidence > threshold
    )
    return PseudoLabelSet(kept, source, threshold)


def intersect_pseudo_labels(sets: Sequence[PseudoLabelSet]) -> PseudoLabelSet:
    """Samples present in all three sets with the same label.

    The surviving confidence is the minimum of the three, and the stored
    probability vector is the one that produced it.  Output order follows
    the first set.
    """
    if len(sets) != 3:
        raise ConfigError(f"expected exactly 3 pseudo-label sets, got {len(sets)}")
    lookups = [s.as_dict() for s in sets]
    kept = []
    for entry in sets[0]:
        members = [lk.get(entry.id) for lk in lookups]
        if any(m is None for m in members):
            continue
        if len({m.label for m in members}) != 1:
            continue
        weakest = min(members, key=lambda m: m.confidence)
        kept.append(PseudoLabel(entry.id, entry.label, weakest.confidence, weakest.probs))
    thresholds = [s.threshold for s in sets if s.threshold is not None]
    return PseudoLabelSet(
        tuple(kept),
        "&".join(s.source for s in sets),
        max(thresholds) if thresholds else None,
    )


def pseudo_label_dataset(pool: Dataset, labels: PseudoLabelSet) -> Dataset:
    """Samples of ``pool`` named in ``labels``, carrying the pseudo-label."""
    missing = [e.id for e in labels if e.id not in pool]
    if missing:
        raise DataError(f"pseudo-labels refer to ids not in the pool: {missing[:5]}")
    return Dataset(tuple(pool[e.id].with_label(e.label) for e in labels), pool.widths)


def write_pseudo_labels(labels: PseudoLabelSet, path: str | Path) -> None:
    """Prediction-record JSONL plus a ``source`` field."""
    lines = []
    for e in labels:
        obj = {"id": e.id, "label": int(e.label), "confidence": e.confidence, "source": labels.source}
        if e.probs is not None:
            obj["probs"] = np.asarray(e.probs).tolist()
        lines.append(json.dumps(obj, separators=(",", ":")))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


@dataclass(frozen=True)
class StageReport:
    stage: int
    n_train: int
    n_pseudo: int
    composition: Mapping[EmotionLabel, int]
    per_model_confident: Mapping[str, int] = field(default_factory=dict)
    final_losses: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SelfTrainResult:
    models: Mapping[str, Classifier]
    history: list[Mapping[str, Classifier]]
    reports: list[StageReport]
    pseudo_labels: list[PseudoLabelSet]


def self_train(
    models: Mapping[str, Classifier],
    labeled: Dataset,
    unlabeled: Dataset,
    stages: int = 2,
    threshold: float = 0.9,
    config: TrainConfig = TrainConfig(),
) -> SelfTrainResult:
    """Run ``stages`` rounds of train -> pseudo-label -> retrain.

    ``models`` maps the roles ``audio``, ``baseline`` and ``agt`` to
    *untrained* models; every stage restarts from those weights with the same
    training seed.  Only ids absent from ``labeled`` are eligible for
    pseudo-labels, and any labels carried by ``unlabeled`` are ignored.
    """
    if stages < 1:
        raise ConfigError("stages must be >= 1")
    if set(models) != set(MODEL_ROLES):
        raise ConfigError(f"self_train needs models for roles {MODEL_ROLES}, got {sorted(models)}")
    if len(labeled) == 0:
        raise DataError("self-training needs a non-empty labeled set")
    candidates = Dataset(
        tuple(s.with_label(None) for s in unlabeled if s.id not in labeled), unlabeled.widths
    )

    history: list[dict[str, Classifier]] = []
    reports: list[StageReport] = []
    pseudo_sets: list[PseudoLabelSet] = []
    pool = labeled
    confident: dict[str, int] = {}
    composition = {lab: 0 for lab in EmotionLabel}
    n_pseudo = 0
    for stage in range(1, stages + 1):
        if stage > 1:
            prev = history[-1]
            if len(candidates):
                sets = [
                    confidence_filter(predict(prev[role], candidates), threshold, role) for role in MODEL_ROLES
                ]
                confident = {role: len(s) for role, s in zip(MODEL_ROLES, sets)}
                agreed = intersect_pseudo_labels(sets)
            else:
                confident = {role: 0 for role in MODEL_ROLES}
                agreed = PseudoLabelSet((), "&".join(MODEL_ROLES), threshold)
            pseudo_sets.append(agreed)
            composition = agreed.composition()
            n_pseudo = len(agreed)
            pool = labeled.concat(pseudo_label_dataset(candidates, agreed))
            logger.info("stage %d: %d pseudo-labels admitted (%s)", stage, n_pseudo, confident)
        trained = {}
        losses = {}
        for role in MODEL_ROLES:
            result = train(models[role], pool, config)
            trained[role] = result.model
            losses[role] = result.losses[-1] if result.losses else float("nan")
        history.append(trained)
        reports.append(StageReport(stage, len(pool), n_pseudo, dict(composition), dict(confident), losses))
    return SelfTrainResult(history[-1], history, reports, pseudo_sets)
