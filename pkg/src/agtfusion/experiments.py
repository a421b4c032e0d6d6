"""Reference synthetic benchmark and the strategy/feature ablation grid.

A grid cell is ``(features, model, strategy)``:

* ``N`` - the model trained on the labeled split only;
* ``P`` - the model after pseudo-label self-training;
* ``P+V`` - regularized voting over the self-trained audio-only, baseline
  and AGT predictions, where the 20% companion share goes to the column's
  model (``vote_companion="column"``) or is split evenly (``"uniform"``).

All cells are scored with weighted F1 on the held-out test split.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .data import (
    MODALITIES,
    PROBED_TEST_WEIGHTS,
    CHALLENGE_TRAIN_COUNTS,
    Dataset,
    EmotionLabel,
    Sample,
    generate_synthetic,
    split,
)
from .errors import ConfigError
from .metrics import f1_scores
from .models import Classifier, TrainConfig, create_model, predict
from .semisup import MODEL_ROLES, SelfTrainResult, self_train
from .vote import VoteConfig, align_predictions, vote_all

__all__ = [
    "BenchmarkConfig",
    "Benchmark",
    "build_benchmark",
    "AblationConfig",
    "AblationResult",
    "ablation_run",
    "STRATEGIES",
    "evaluate_model",
]

logger = logging.getLogger(__name__)

STRATEGIES = ("N", "P", "P+V")
FUSION_MODELS = ("baseline", "agt")


def _allocate_counts(total: int, weights: Mapping[EmotionLabel, float]) -> dict[EmotionLabel, int]:
    w = np.array([weights.get(lab, 0.0) for lab in EmotionLabel], dtype=np.float64)
    raw = total * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return {lab: int(c) for lab, c in zip(EmotionLabel, counts)}


@dataclass(frozen=True)
class BenchmarkConfig:
    """Synthetic stand-in for the challenge data.

    The training pool follows the challenge's per-class training counts and
    is split into labeled/unlabeled parts.  The held-out test split shares
    the class prototypes but is drawn with its own noise, with class
    proportions set by the probed test-set weights.
    """

    train_counts: Mapping[EmotionLabel, int] = field(default_factory=lambda: dict(CHALLENGE_TRAIN_COUNTS))
    test_size: int = 1000
    test_weights: Mapping[EmotionLabel, float] = field(default_factory=lambda: dict(PROBED_TEST_WEIGHTS))
    widths: tuple[int, int, int] = (64, 64, 64)
    noise_sigma: float = 0.3
    conflict_rate: float = 0.2
    conflict_modalities: tuple[str, ...] = ("video", "text")
    labeled_fraction: float = 0.2
    seed: int = 0

    @property
    def test_counts(self) -> dict[EmotionLabel, int]:
        return _allocate_counts(self.test_size, self.test_weights)


@dataclass(frozen=True, eq=False)
class Benchmark:
    labeled: Dataset
    unlabeled: Dataset
    test: Dataset


def build_benchmark(cfg: BenchmarkConfig = BenchmarkConfig()) -> Benchmark:
    common = dict(
        widths=cfg.widths,
        noise_sigma=cfg.noise_sigma,
        conflict_rate=cfg.conflict_rate,
        conflict_modalities=cfg.conflict_modalities,
        prototype_seed=cfg.seed,
    )
    pool = generate_synthetic(cfg.train_counts, seed=cfg.seed, id_prefix="train", **common)
    test = generate_synthetic(cfg.test_counts, seed=cfg.seed + 1_000_003, id_prefix="test", **common)
    labeled, unlabeled = split(pool, (cfg.labeled_fraction, 1.0 - cfg.labeled_fraction), seed=cfg.seed)
    return Benchmark(labeled, unlabeled.without_labels(), test)


def mask_modalities(dataset: Dataset, features: str) -> Dataset:
    """Zero every modality whose initial (``a``, ``v``, ``t``) is absent from ``features``."""
    keep = {m: m[0] in features for m in MODALITIES}
    if all(keep.values()):
        return dataset
    samples = tuple(
        Sample(
            s.id,
            *(getattr(s, m) if keep[m] else np.zeros_like(getattr(s, m)) for m in MODALITIES),
            s.label,
        )
        for s in dataset
    )
    return Dataset(samples, dataset.widths)


def evaluate_model(model: Classifier, test: Dataset) -> tuple[float, dict[str, EmotionLabel]]:
    preds = {p.id: p.label for p in predict(model, test)}
    truths = {s.id: s.label for s in test}
    return f1_scores(preds, truths), preds


@dataclass(frozen=True)
class AblationConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    models: tuple[str, ...] = FUSION_MODELS
    strategies: tuple[str, ...] = STRATEGIES
    features: tuple[str, ...] = ("avt",)
    model_params: Mapping[str, object] = field(
        default_factory=lambda: {
            "d_model": 32, "n_heads": 4, "d_ff": 64, "n_layers": 2, "hidden": 64,
            "amf_threshold": 0.2,
        }
    )
    train: TrainConfig = TrainConfig(epochs=15)
    stages: int = 2
    threshold: float = 0.9
    hubert_weight: float = 0.8
    vote_companion: str = "column"
    vote_seed: int = 0

    def __post_init__(self):
        bad_models = [m for m in self.models if m not in FUSION_MODELS]
        bad_strats = [s for s in self.strategies if s not in STRATEGIES]
        bad_feats = [f for f in self.features if not f or set(f) - set("avt") or "a" not in f]
        if bad_models or bad_strats or bad_feats:
            raise ConfigError(
                f"invalid grid: models {bad_models}, strategies {bad_strats}, features {bad_feats} "
                f"(models from {FUSION_MODELS}, strategies from {STRATEGIES}, features over 'avt' incl. 'a')"
            )
        if self.vote_companion not in ("column", "uniform"):
            raise ConfigError("vote_companion must be 'column' or 'uniform'")
        if not self.models or not self.strategies or not self.features:
            raise ConfigError("grid needs at least one model, strategy and feature set")

    def vote_config(self, column: str) -> VoteConfig:
        rest = 1.0 - self.hubert_weight
        if self.vote_companion == "uniform":
            split_ = (rest / 2, rest - rest / 2)
        else:
            split_ = (rest, 0.0) if column == "baseline" else (0.0, rest)
        return VoteConfig(self.hubert_weight, split_, seed=self.vote_seed)


@dataclass(frozen=True, eq=False)
class AblationResult:
    config: AblationConfig
    cells: dict[tuple[str, str, str], float]
    self_training: dict[str, SelfTrainResult]
    seconds: float

    def table(self) -> list[list[str]]:
        rows = [["features", "model", *self.config.strategies]]
        for feats in self.config.features:
            for model in self.config.models:
                rows.append([feats, model, *(f"{self.cells[(feats, model, s)]:.4f}" for s in self.config.strategies)])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table())
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())


def _fresh_models(cfg: AblationConfig, widths) -> dict[str, Classifier]:
    seed = cfg.train.seed
    return {role: create_model(role, widths, seed=seed, **cfg.model_params) for role in MODEL_ROLES}


def ablation_run(cfg: AblationConfig = AblationConfig(), bench: Benchmark | None = None) -> AblationResult:
    """Train and score every grid cell; deterministic for a fixed configuration."""
    start = time.perf_counter()
    bench = bench or build_benchmark(cfg.benchmark)
    need_p = any(s in ("P", "P+V") for s in cfg.strategies)
    cells: dict[tuple[str, str, str], float] = {}
    runs: dict[str, SelfTrainResult] = {}
    for feats in cfg.features:
        labeled = mask_modalities(bench.labeled, feats)
        unlabeled = mask_modalities(bench.unlabeled, feats)
        test = mask_modalities(bench.test, feats)
        result = self_train(
            _fresh_models(cfg, labeled.widths),
            labeled,
            unlabeled,
            stages=cfg.stages if need_p else 1,
            threshold=cfg.threshold,
            config=cfg.train,
        )
        runs[feats] = result
        truths = {s.id: s.label for s in test}
        stage1 = result.history[0]
        final = result.history[-1]
        final_preds = {role: evaluate_model(final[role], test)[1] for role in MODEL_ROLES}
        for model in cfg.models:
            if "N" in cfg.strategies:
                cells[(feats, model, "N")] = evaluate_model(stage1[model], test)[0]
            if "P" in cfg.strategies:
                cells[(feats, model, "P")] = f1_scores(final_preds[model], truths)
            if "P+V" in cfg.strategies:
                triples = align_predictions(final_preds["audio"], final_preds["baseline"], final_preds["agt"])
                voted = vote_all(triples, cfg.vote_config(model))
                cells[(feats, model, "P+V")] = f1_scores(voted.labels, truths)
        logger.info("features %s done: %s", feats, {k: round(v, 4) for k, v in cells.items() if k[0] == feats})
    return AblationResult(cfg, cells, runs, time.perf_counter() - start)
