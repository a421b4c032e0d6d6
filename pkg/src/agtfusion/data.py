"""Samples, datasets, JSONL persistence and the synthetic multimodal generator."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError, DataError

__all__ = [
    "EmotionLabel",
    "NUM_CLASSES",
    "MODALITIES",
    "CHALLENGE_TRAIN_COUNTS",
    "PROBED_TEST_WEIGHTS",
    "Sample",
    "Dataset",
    "PredictionRecord",
    "read_jsonl",
    "write_jsonl",
    "read_predictions",
    "write_predictions",
    "read_labels",
    "generate_synthetic",
    "split",
    "parse_label_map",
]

MODALITIES = ("audio", "video", "text")


class EmotionLabel(enum.IntEnum):
    WORRY = 0
    HAPPY = 1
    NEUTRAL = 2
    ANGRY = 3
    SURPRISE = 4
    SAD = 5

    @property
    def display(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> EmotionLabel:
        """Accept a code (0-5) or a name such as ``"sad"``; reject anything else."""
        if isinstance(value, EmotionLabel):
            return value
        if isinstance(value, bool):
            raise DataError(f"invalid emotion label {value!r}")
        if isinstance(value, (int, np.integer)):
            try:
                return cls(int(value))
            except ValueError:
                raise DataError(f"emotion label code {value} outside 0..5") from None
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
        raise DataError(f"invalid emotion label {value!r}")


NUM_CLASSES = len(EmotionLabel)

# Per-class training counts of the challenge training set.
CHALLENGE_TRAIN_COUNTS = {
    EmotionLabel.WORRY: 616,
    EmotionLabel.HAPPY: 1038,
    EmotionLabel.NEUTRAL: 1248,
    EmotionLabel.SAD: 730,
    EmotionLabel.ANGRY: 1208,
    EmotionLabel.SURPRISE: 190,
}

# Per-class scores probed on the hidden test set, used as unnormalised weights.
PROBED_TEST_WEIGHTS = {
    EmotionLabel.WORRY: 0.0326,
    EmotionLabel.HAPPY: 0.0732,
    EmotionLabel.NEUTRAL: 0.0505,
    EmotionLabel.SAD: 0.1157,
    EmotionLabel.ANGRY: 0.03412,
    EmotionLabel.SURPRISE: 0.0094,
}


def parse_label_map(text: str) -> dict[EmotionLabel, float]:
    """Parse ``"worry=616,happy=1038"`` into a label-keyed mapping."""
    out: dict[EmotionLabel, float] = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in part:
            raise DataError(f"expected label=value, got {part!r}")
        k, v = part.split("=", 1)
        label = EmotionLabel.parse(int(k) if k.strip().isdigit() else k)
        out[label] = float(v)
    return out


def _vector(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{what} must be a flat list of numbers")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    audio: np.ndarray
    video: np.ndarray
    text: np.ndarray
    label: EmotionLabel | None = None

    def __post_init__(self):
        for m in MODALITIES:
            object.__setattr__(self, m, _vector(getattr(self, m), f"sample {self.id!r} {m}"))
        if self.label is not None:
            object.__setattr__(self, "label", EmotionLabel.parse(self.label))

    @property
    def labeled(self) -> bool:
        return self.label is not None

    @property
    def widths(self) -> tuple[int, int, int]:
        return (self.audio.size, self.video.size, self.text.size)

    def with_label(self, label: EmotionLabel | None) -> Sample:
        return Sample(self.id, self.audio, self.video, self.text, label)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and all(np.array_equal(getattr(self, m), getattr(other, m)) for m in MODALITIES)
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "audio": self.audio.tolist(),
            "video": self.video.tolist(),
            "text": self.text.tolist(),
            "label": None if self.label is None else int(self.label),
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ordered collection of samples with uniform widths."""

    samples: tuple[Sample, ...]
    widths: tuple[int, int, int] | None = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        widths = self.widths
        if widths is None and samples:
            widths = samples[0].widths
        if widths is not None:
            widths = tuple(int(w) for w in widths)
        object.__setattr__(self, "widths", widths)
        index: dict[str, int] = {}
        for i, s in enumerate(samples):
            if s.widths != widths:
                raise DataError(f"sample {s.id!r} has widths {s.widths}, dataset declares {widths}")
            if s.id in index:
                raise DataError(f"duplicate sample id {s.id!r}")
            index[s.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, key: int | str) -> Sample:
        if isinstance(key, str):
            return self.samples[self._index[key]]
        return self.samples[key]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.widths == other.widths and self.samples == other.samples

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def is_labeled(self, sample_id: str) -> bool:
        return self[sample_id].labeled

    @property
    def all_labeled(self) -> bool:
        return all(s.labeled for s in self.samples)

    def labels(self) -> np.ndarray:
        """Label codes; ``-1`` marks unlabeled samples."""
        return np.array([-1 if s.label is None else int(s.label) for s in self.samples], dtype=np.int64)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(audio, video, text)`` matrices, one row per sample."""
        if not self.samples:
            d = self.widths or (0, 0, 0)
            return tuple(np.zeros((0, w)) for w in d)  # type: ignore[return-value]
        return tuple(np.stack([getattr(s, m) for s in self.samples]) for m in MODALITIES)  # type: ignore[return-value]

    def label_counts(self) -> dict[EmotionLabel, int]:
        counts = {lab: 0 for lab in EmotionLabel}
        for s in self.samples:
            if s.label is not None:
                counts[s.label] += 1
        return counts

    def subset(self, ids: Iterable[str]) -> Dataset:
        return Dataset(tuple(self[i] for i in ids), self.widths)

    def without_labels(self) -> Dataset:
        return Dataset(tuple(s.with_label(None) for s in self.samples), self.widths)

    def concat(self, other: Dataset) -> Dataset:
        if self.widths and other.widths and self.widths != other.widths:
            raise DataError(f"cannot concatenate datasets with widths {self.widths} and {other.widths}")
        return Dataset(self.samples + other.samples, self.widths or other.widths)


# ---------------------------------------------------------------- JSONL


def read_jsonl(path: str | Path) -> Dataset:
    """Load a dataset; errors name the offending line or sample id."""
    samples = []
    widths = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise DataError("expected a JSON object")
                missing = [k for k in ("id", *MODALITIES) if k not in obj]
                if missing:
                    raise DataError(f"missing field(s) {missing}")
                label = obj.get("label")
                sample = Sample(
                    str(obj["id"]),
                    obj["audio"],
                    obj["video"],
                    obj["text"],
                    None if label is None else EmotionLabel.parse(label),
                )
            except (json.JSONDecodeError, DataError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if widths is None:
                widths = sample.widths
            elif sample.widths != widths:
                raise DataError(
                    f"{path}:{lineno}: sample {sample.id!r} has widths {sample.widths}, expected {widths}"
                )
            samples.append(sample)
    try:
        return Dataset(tuple(samples), widths)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    lines = [json.dumps(s.to_json(), separators=(",", ":")) for s in dataset]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------- predictions


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """Class-probability vector for one sample with its argmax and confidence."""

    id: str
    probs: np.ndarray
    source: str | None = None

    def __post_init__(self):
        probs = _vector(self.probs, f"prediction {self.id!r} probs")
        if probs.size != NUM_CLASSES:
            raise DataError(f"prediction {self.id!r}: expected {NUM_CLASSES} probabilities, got {probs.size}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise DataError(f"prediction {self.id!r}: probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def label(self) -> EmotionLabel:
        return EmotionLabel(int(np.argmax(self.probs)))

    @property
    def confidence(self) -> float:
        return float(self.probs.max())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictionRecord):
            return NotImplemented
        return self.id == other.id and self.source == other.source and np.array_equal(self.probs, other.probs)

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "probs": self.probs.tolist(),
            "label": int(self.label),
            "confidence": self.confidence,
        }
        if self.source is not None:
            obj["source"] = self.source
        return obj


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    lines = [json.dumps(r.to_json(), separators=(",", ":")) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = PredictionRecord(str(obj["id"]), obj["probs"], obj.get("source"))
                if "label" in obj and EmotionLabel.parse(obj["label"]) != rec.label:
                    raise DataError(f"label {obj['label']} disagrees with argmax of probs")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if rec.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            out.append(rec)
    return out


def read_labels(path: str | Path) -> dict[str, EmotionLabel]:
    """``id -> label`` from any JSONL whose records carry ``id`` and ``label``.

    Reads prediction files, vote outputs and labeled datasets alike.
    """
    out: dict[str, EmotionLabel] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                sample_id, label = str(obj["id"]), obj["label"]
                if label is None:
                    raise DataError(f"sample {sample_id!r} is unlabeled")
                label = EmotionLabel.parse(label)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if sample_id in out:
                raise DataError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            out[sample_id] = label
    return out


# ---------------------------------------------------------------- synthetic data


def _prototype(label: int, modality: int, width: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, label, modality, width])
    v = rng.standard_normal(width)
    return v / np.linalg.norm(v)


def generate_synthetic(
    per_class_counts: Mapping,
    widths: Sequence[int] = (64, 64, 64),
    noise_sigma: float = 0.3,
    conflict_rate: float = 0.0,
    seed: int = 0,
    *,
    conflict_modalities: Sequence[str] = MODALITIES,
    prototype_seed: int | None = None,
    id_prefix: str = "syn",
) -> Dataset:
    """Draw labeled samples around fixed per-(class, modality) unit prototypes.

    Each modality vector is ``prototype + N(0, noise_sigma^2 I)``.  With
    probability ``conflict_rate`` one modality, chosen uniformly from
    ``conflict_modalities``, is drawn around a different class's prototype
    instead.  ``prototype_seed`` (default ``seed``) fixes the prototypes, so
    a train pool and a held-out set can share geometry but not noise.
    """
    counts = {EmotionLabel.parse(k): int(v) for k, v in per_class_counts.items()}
    if any(v < 0 for v in counts.values()):
        raise ConfigError("class counts must be non-negative")
    total = sum(counts.values())
    if total == 0:
        raise ConfigError("synthetic dataset needs at least one sample")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    if not 0.0 <= conflict_rate <= 1.0:
        raise ConfigError("conflict_rate must lie in [0, 1]")
    widths = tuple(int(w) for w in widths)
    if len(widths) != 3 or min(widths) < 1:
        raise ConfigError(f"widths must be three positive integers, got {widths}")
    conflict_idx = [MODALITIES.index(m) for m in conflict_modalities]
    if not conflict_idx:
        raise ConfigError("conflict_modalities must name at least one modality")

    pseed = seed if prototype_seed is None else prototype_seed
    protos = {
        (int(c), m): _prototype(int(c), m, widths[m], pseed) for c in EmotionLabel for m in range(3)
    }
    rng = np.random.default_rng([seed, 0x5EED])
    labels = [lab for lab in EmotionLabel for _ in range(counts.get(lab, 0))]
    order = rng.permutation(total)
    samples = []
    for n, i in enumerate(order):
        lab = int(labels[i])
        sources = [lab, lab, lab]
        if conflict_rate > 0 and rng.random() < conflict_rate:
            m = conflict_idx[int(rng.integers(len(conflict_idx)))]
            other = int(rng.integers(NUM_CLASSES - 1))
            sources[m] = other if other < lab else other + 1
        vecs = [protos[(sources[m], m)] + noise_sigma * rng.standard_normal(widths[m]) for m in range(3)]
        samples.append(Sample(f"{id_prefix}-{n:06d}", *vecs, EmotionLabel(lab)))
    return Dataset(tuple(samples), widths)


# ---------------------------------------------------------------- splitting


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items; each part within 1 of n*f."""
    raw = [n * f for f in fractions]
    sizes = [math.floor(r) for r in raw]
    short = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split(dataset: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, ...]:
    """Stratified, deterministic partition into ``len(fractions)`` datasets.

    Unlabeled samples form their own stratum.  Sample order inside each part
    follows the input order.
    """
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ConfigError(f"split fractions must lie in [0, 1]: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    strata: dict[int, list[int]] = {}
    for i, s in enumerate(dataset):
        strata.setdefault(-1 if s.label is None else int(s.label), []).append(i)
    assignment = np.empty(len(dataset), dtype=np.int64)
    rng = np.random.default_rng([seed, 0x5711])
    for key in sorted(strata):
        idx = np.array(strata[key])
        idx = idx[rng.permutation(idx.size)]
        start = 0
        for part, size in enumerate(_allocate(idx.size, fractions)):
            assignment[idx[start:start + size]] = part
            start += size
    return tuple(
        Dataset(tuple(s for s, a in zip(dataset, assignment) if a == part), dataset.widths)
        for part in range(len(fractions))
    )
