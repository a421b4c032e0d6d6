"""Regularized voting over audio-only, baseline and AGT predictions.

Rule, per sample:

* If none of the three predicted labels is sensitive (default: worry, sad),
  take the majority; a three-way split falls back to the audio-only model.
* Otherwise draw ``u`` in [0, 1) from the seeded stream and pick audio-only
  when ``u < hubert_weight``, the baseline when
  ``u < hubert_weight + companion_split[0]``, and AGT otherwise.

Samples are processed in sorted-id order and only sensitive samples consume
a draw, so the outcome does not depend on input file order.

Random stream: SplitMix64.  The state starts at ``seed mod 2**64``; each draw
adds ``0x9E3779B97F4A7C15`` to the state and returns::

    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
    z = z ^ (z >> 31)

and ``u = (z >> 11) * 2**-53``.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ._io import atomic_write_text
from .data import EmotionLabel, PredictionRecord
from .errors import ConfigError, DataError

__all__ = [
    "SplitMix64",
    "VoteConfig",
    "VoteTriple",
    "VoteReport",
    "VoteResult",
    "vote_one",
    "vote_all",
    "align_predictions",
    "write_vote_labels",
    "write_vote_report",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """64-bit SplitMix generator (Steele, Lea & Flood constants)."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64
        self.draws = 0

    def next_uint64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.draws += 1
        return z ^ (z >> 31)

    def next_float(self) -> float:
        return (self.next_uint64() >> 11) * 2.0**-53


@dataclass(frozen=True)
class VoteConfig:
    hubert_weight: float = 0.8
    companion_split: tuple[float, float] = (0.1, 0.1)
    sensitive_labels: frozenset[EmotionLabel] = frozenset({EmotionLabel.WORRY, EmotionLabel.SAD})
    seed: int = 0

    def __post_init__(self):
        split = tuple(float(x) for x in self.companion_split)
        if len(split) != 2:
            raise ConfigError("companion_split needs two probabilities (baseline, agt)")
        object.__setattr__(self, "companion_split", split)
        object.__setattr__(
            self, "sensitive_labels", frozenset(EmotionLabel.parse(x) for x in self.sensitive_labels)
        )
        probs = (self.hubert_weight, *split)
        if any(p < 0 for p in probs):
            raise ConfigError(f"vote probabilities must be non-negative: {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError(f"hubert_weight + companion_split must equal 1, got {sum(probs)!r}")


@dataclass(frozen=True)
class VoteTriple:
    id: str
    audio_pred: EmotionLabel
    baseline_pred: EmotionLabel
    agt_pred: EmotionLabel

    @property
    def preds(self) -> tuple[EmotionLabel, EmotionLabel, EmotionLabel]:
        return (self.audio_pred, self.baseline_pred, self.agt_pred)


_ROLES = ("audio", "baseline", "agt")


def _majority(triple: VoteTriple) -> tuple[EmotionLabel, bool]:
    """Majority label and whether the three-way-split fallback was used."""
    a, b, g = triple.preds
    if b == g:
        return b, False
    return a, a not in (b, g)


def _vote(triple: VoteTriple, cfg: VoteConfig, rng: SplitMix64) -> tuple[EmotionLabel, str | None, bool]:
    """``(label, role picked on the probabilistic branch or None, tie fallback used)``."""
    if not any(p in cfg.sensitive_labels for p in triple.preds):
        label, tie = _majority(triple)
        return label, None, tie
    u = rng.next_float()
    if u < cfg.hubert_weight:
        return triple.audio_pred, "audio", False
    if u < cfg.hubert_weight + cfg.companion_split[0]:
        return triple.baseline_pred, "baseline", False
    return triple.agt_pred, "agt", False


def vote_one(triple: VoteTriple, cfg: VoteConfig, rng: SplitMix64) -> EmotionLabel:
    """Final label for one sample; draws from ``rng`` only on the sensitive branch."""
    return _vote(triple, cfg, rng)[0]


@dataclass
class VoteReport:
    """Branch usage and per-model selection counts of one voting run.

    ``agreement[role]`` counts samples whose final label equals that model's
    prediction; ``picked[role]`` counts probabilistic-branch draws that
    selected the model.
    """

    majority: int = 0
    probabilistic: int = 0
    tie_fallbacks: int = 0
    draws: int = 0
    picked: Counter = field(default_factory=Counter)
    agreement: Counter = field(default_factory=Counter)

    def rows(self) -> list[tuple[str, str, int]]:
        """``(branch, model, count)`` rows in a fixed order."""
        out = [
            ("majority", "total", self.majority),
            ("majority", "tie_fallback_audio", self.tie_fallbacks),
            ("probabilistic", "total", self.probabilistic),
        ]
        out.extend(("probabilistic", role, self.picked.get(role, 0)) for role in _ROLES)
        out.extend(("agreement", role, self.agreement.get(role, 0)) for role in _ROLES)
        out.append(("rng", "draws", self.draws))
        return out


@dataclass(frozen=True)
class VoteResult:
    labels: dict[str, EmotionLabel]
    report: VoteReport


def vote_all(triples: Sequence[VoteTriple], cfg: VoteConfig = VoteConfig()) -> VoteResult:
    ids = [t.id for t in triples]
    if len(set(ids)) != len(ids):
        dup = sorted(i for i, c in Counter(ids).items() if c > 1)
        raise DataError(f"duplicate ids in vote input: {dup[:10]}")
    rng = SplitMix64(cfg.seed)
    report = VoteReport()
    labels: dict[str, EmotionLabel] = {}
    for triple in sorted(triples, key=lambda t: t.id):
        label, picked, tie = _vote(triple, cfg, rng)
        labels[triple.id] = label
        if picked is None:
            report.majority += 1
            report.tie_fallbacks += tie
        else:
            report.probabilistic += 1
            report.picked[picked] += 1
        for role, pred in zip(_ROLES, triple.preds):
            report.agreement[role] += pred == label
    report.draws = rng.draws
    return VoteResult(labels, report)


def align_predictions(
    audio: Sequence[PredictionRecord] | Mapping[str, EmotionLabel],
    baseline: Sequence[PredictionRecord] | Mapping[str, EmotionLabel],
    agt: Sequence[PredictionRecord] | Mapping[str, EmotionLabel],
) -> list[VoteTriple]:
    """Join three prediction lists by id; any id missing from a list is an error."""

    def as_map(preds, name) -> dict[str, EmotionLabel]:
        if isinstance(preds, Mapping):
            return {k: EmotionLabel.parse(v) for k, v in preds.items()}
        out = {}
        for p in preds:
            if p.id in out:
                raise DataError(f"duplicate id {p.id!r} in {name} predictions")
            out[p.id] = p.label
        return out

    maps = [as_map(p, name) for p, name in zip((audio, baseline, agt), _ROLES)]
    every = set().union(*maps)
    problems = []
    for name, m in zip(_ROLES, maps):
        missing = sorted(every - set(m))
        if missing:
            more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
            problems.append(f"{name} predictions lack {len(missing)} id(s): {missing[:20]}{more}")
    if problems:
        raise DataError("prediction files are not aligned: " + "; ".join(problems))
    return [VoteTriple(i, maps[0][i], maps[1][i], maps[2][i]) for i in sorted(every)]


def write_vote_labels(result: VoteResult, path: str | Path) -> None:
    lines = [json.dumps({"id": i, "label": int(lab)}) for i, lab in sorted(result.labels.items())]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_vote_report(result: VoteResult, path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["branch", "model", "count"])
    w.writerows(result.report.rows())
    atomic_write_text(path, buf.getvalue())
