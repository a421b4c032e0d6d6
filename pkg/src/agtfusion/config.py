"""Run configuration loaded from TOML.

Every key has a default, so an empty file (or no file) is a valid config.
Unknown sections or keys are rejected.  Command-line flags override file
values through :meth:`RunConfig.override`, which takes dotted keys such as
``"train.epochs"``.

Defaults::

    seed = 0

    [data]
    widths = [64, 64, 64]
    noise_sigma = 0.3
    conflict_rate = 0.2
    conflict_modalities = ["video", "text"]
    labeled_fraction = 0.2
    test_size = 1000
    # train_counts / test_weights default to the challenge training counts
    # and the probed test-set weights; override with {worry = 616, ...}

    [model]
    d_model = 32
    n_heads = 4
    d_ff = 64
    n_layers = 2
    hidden = 64
    amf_threshold = 0.2
    residual_init_scale = 1.0

    [train]
    epochs = 15
    batch_size = 32
    lr = 1e-3
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8
    weight_decay = 0.0

    [semisup]
    stages = 2
    threshold = 0.9

    [vote]
    hubert_weight = 0.8
    companion_split = [0.1, 0.1]
    sensitive_labels = ["worry", "sad"]

    [ablate]
    models = ["baseline", "agt"]
    strategies = ["N", "P", "P+V"]
    features = ["avt"]
    vote_companion = "column"
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import CHALLENGE_TRAIN_COUNTS, MODALITIES, PROBED_TEST_WEIGHTS, EmotionLabel
from .errors import ConfigError, DataError
from .experiments import FUSION_MODELS, STRATEGIES, AblationConfig, BenchmarkConfig
from .models import ARCHITECTURES, TrainConfig, create_model
from .vote import VoteConfig

__all__ = ["RunConfig", "load_config"]


def _label_map(value: Any, what: str, cast) -> dict[EmotionLabel, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(f"{what} must be a table of label = value")
    try:
        out = {EmotionLabel.parse(k): cast(v) for k, v in value.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None
    return {lab: out.get(lab, cast(0)) for lab in EmotionLabel}


@dataclass(frozen=True)
class DataSection:
    widths: tuple[int, int, int] = (64, 64, 64)
    noise_sigma: float = 0.3
    conflict_rate: float = 0.2
    conflict_modalities: tuple[str, ...] = ("video", "text")
    labeled_fraction: float = 0.2
    test_size: int = 1000
    train_counts: Mapping[EmotionLabel, int] = field(default_factory=lambda: dict(CHALLENGE_TRAIN_COUNTS))
    test_weights: Mapping[EmotionLabel, float] = field(default_factory=lambda: dict(PROBED_TEST_WEIGHTS))

    def __post_init__(self):
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError(f"data.widths must be three positive integers, got {list(self.widths)}")
        bad = [m for m in self.conflict_modalities if m not in MODALITIES]
        if bad or not self.conflict_modalities:
            raise ConfigError(f"data.conflict_modalities must be a non-empty subset of {MODALITIES}")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ConfigError("data.labeled_fraction must lie in (0, 1)")
        if self.test_size < 1:
            raise ConfigError("data.test_size must be >= 1")


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_layers: int = 2
    hidden: int = 64
    amf_threshold: float = 0.2
    residual_init_scale: float = 1.0


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass(frozen=True)
class SemisupSection:
    stages: int = 2
    threshold: float = 0.9

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError("semisup.stages must be >= 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("semisup.threshold must lie in (0, 1]")


@dataclass(frozen=True)
class VoteSection:
    hubert_weight: float = 0.8
    companion_split: tuple[float, float] = (0.1, 0.1)
    sensitive_labels: tuple[str, ...] = ("worry", "sad")


@dataclass(frozen=True)
class AblateSection:
    models: tuple[str, ...] = FUSION_MODELS
    strategies: tuple[str, ...] = STRATEGIES
    features: tuple[str, ...] = ("avt",)
    vote_companion: str = "column"


_SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "semisup": SemisupSection,
    "vote": VoteSection,
    "ablate": AblateSection,
}


def _coerce(cls, name: str, value: Any) -> Any:
    """Convert a TOML value to the field's type, or raise ConfigError."""
    default = getattr(cls(), name)
    key = f"{_section_name(cls)}.{name}"
    if name in ("train_counts", "test_weights"):
        return _label_map(value, key, int if name == "train_counts" else float)
    if isinstance(default, tuple):
        if isinstance(value, str) or not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        item_type = type(default[0]) if default else str
        return tuple(_scalar(item_type, v, key) for v in value)
    return _scalar(type(default), value, key)


def _scalar(kind: type, value: Any, key: str) -> Any:
    if kind is bool or isinstance(value, bool):
        raise ConfigError(f"{key}: booleans are not accepted here, got {value!r}")
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _section_name(cls) -> str:
    return next(k for k, v in _SECTIONS.items() if v is cls)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    semisup: SemisupSection = field(default_factory=SemisupSection)
    vote: VoteSection = field(default_factory=VoteSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> RunConfig:
        unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config key(s) {unknown}; expected 'seed' or sections {sorted(_SECTIONS)}")
        kwargs: dict[str, Any] = {}
        if "seed" in doc:
            kwargs["seed"] = _scalar(int, doc["seed"], "seed")
        for name, section_cls in _SECTIONS.items():
            if name not in doc:
                continue
            table = doc[name]
            if not isinstance(table, Mapping):
                raise ConfigError(f"[{name}] must be a table")
            known = {f.name for f in fields(section_cls)}
            extra = sorted(set(table) - known)
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {extra}; known keys are {sorted(known)}")
            kwargs[name] = section_cls(**{k: _coerce(section_cls, k, v) for k, v in table.items()})
        config = cls(**kwargs)
        config.validate()
        return config

    def override(self, values: Mapping[str, Any]) -> RunConfig:
        """Apply dotted-key overrides; ``None`` values are skipped."""
        config = self
        for key, value in values.items():
            if value is None:
                continue
            if key == "seed":
                config = replace(config, seed=_scalar(int, value, "seed"))
                continue
            section, _, name = key.partition(".")
            if section not in _SECTIONS or name not in {f.name for f in fields(_SECTIONS[section])}:
                raise ConfigError(f"unknown config key {key!r}")
            section_cls = _SECTIONS[section]
            updated = replace(getattr(config, section), **{name: _coerce(section_cls, name, value)})
            config = replace(config, **{section: updated})
        config.validate()
        return config

    def validate(self) -> None:
        """Build every derived object once so bad values fail early."""
        self.train_config()
        self.vote_config()
        self.ablation_config()
        for arch in ARCHITECTURES:
            create_model(arch, (1, 1, 1), **self.model_params())

    def as_dict(self) -> dict[str, Any]:
        def plain(v):
            if isinstance(v, Mapping):
                return {(k.display if isinstance(k, EmotionLabel) else k): plain(x) for k, x in v.items()}
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v

        out: dict[str, Any] = {"seed": self.seed}
        for name in _SECTIONS:
            out[name] = {k: plain(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return out

    # -- derived objects

    def model_params(self) -> dict[str, Any]:
        return dataclasses.asdict(self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **dataclasses.asdict(self.train))

    def vote_config(self) -> VoteConfig:
        try:
            sensitive = frozenset(EmotionLabel.parse(x) for x in self.vote.sensitive_labels)
        except DataError as exc:
            raise ConfigError(f"vote.sensitive_labels: {exc}") from None
        return VoteConfig(self.vote.hubert_weight, self.vote.companion_split, sensitive, seed=self.seed)

    def benchmark_config(self) -> BenchmarkConfig:
        d = self.data
        return BenchmarkConfig(
            train_counts=dict(d.train_counts),
            test_size=d.test_size,
            test_weights=dict(d.test_weights),
            widths=tuple(d.widths),
            noise_sigma=d.noise_sigma,
            conflict_rate=d.conflict_rate,
            conflict_modalities=tuple(d.conflict_modalities),
            labeled_fraction=d.labeled_fraction,
            seed=self.seed,
        )

    def ablation_config(self) -> AblationConfig:
        return AblationConfig(
            benchmark=self.benchmark_config(),
            models=tuple(self.ablate.models),
            strategies=tuple(self.ablate.strategies),
            features=tuple(self.ablate.features),
            model_params=self.model_params(),
            train=self.train_config(),
            stages=self.semisup.stages,
            threshold=self.semisup.threshold,
            hubert_weight=self.vote.hubert_weight,
            vote_companion=self.ablate.vote_companion,
            vote_seed=self.seed,
        )


def load_config(path: str | Path | None) -> RunConfig:
    """Read a TOML run config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    try:
        return RunConfig.from_mapping(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
