"""Classifier architectures, the contrastive alignment loss, training and
prediction.

Three classifiers share one interface (:class:`Classifier`):

* :class:`AudioOnlyModel` - MLP over the audio vector; plays the role of the
  robust audio-only predictor in pseudo-labeling and voting.
* :class:`BaselineModel` - project each modality, concatenate, MLP.
* :class:`AgtModel` - audio-guided transformer: audio leads two 2-token
  sequences ``[A, V]`` and ``[A, T]``, each refined by its own CBT stack,
  mean-pooled and passed through AMF gating before a linear head.

Models are immutable: training returns a new instance.
"""

from __future__ import annotations

import inspect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from ._io import atomic_write_text
from .autodiff import Tape, Tensor
from .data import NUM_CLASSES, Dataset, PredictionRecord
from .errors import ConfigError, DataError, DimensionError, NonFiniteError
from .nn import AmfParams, CbtBlockParams, amf_gate, cbt_forward, init_cbt_block

__all__ = [
    "Classifier",
    "AudioOnlyModel",
    "BaselineModel",
    "AgtModel",
    "AlignmentHead",
    "ARCHITECTURES",
    "agt_forward",
    "baseline_forward",
    "audio_forward",
    "contrastive_loss",
    "TrainConfig",
    "TrainResult",
    "train",
    "predict",
    "save_model",
    "load_model",
    "model_to_json",
    "model_from_json",
    "train_alignment",
    "create_model",
]

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), (fan_in, fan_out))


def _as_batch(x, width: int, what: str) -> tuple[Tensor, bool]:
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x, single = x.reshape(1, -1), True
    else:
        single = False
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what} input must have width {width}, got shape {x.shape}")
    return x, single


@dataclass(frozen=True, eq=False)
class Classifier:
    """Common surface of the three architectures.

    ``params`` maps parameter names to float64 arrays; ``hparams`` holds the
    widths and sizes needed to rebuild the graph.
    """

    hparams: Mapping[str, Any]
    params: Mapping[str, np.ndarray]
    architecture: ClassVar[str] = ""

    @property
    def widths(self) -> tuple[int, int, int]:
        return (self.hparams["d_a"], self.hparams["d_v"], self.hparams["d_t"])

    def with_params(self, params: Mapping[str, np.ndarray]) -> Classifier:
        if set(params) != set(self.params):
            raise ConfigError(f"{self.architecture}: parameter names do not match")
        return type(self)(dict(self.hparams), {k: np.asarray(v, dtype=np.float64) for k, v in params.items()})

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def graph(self, p: Mapping[str, Tensor], a, v, t) -> Tensor:
        """Logits ``[batch, 6]`` for batched inputs using parameter tensors ``p``."""
        raise NotImplementedError

    def forward(self, a, v, t, params: Mapping[str, Tensor] | None = None) -> Tensor:
        d_a, d_v, d_t = self.widths
        a, single = _as_batch(a, d_a, "audio")
        v, _ = _as_batch(v, d_v, "video")
        t, _ = _as_batch(t, d_t, "text")
        if not (a.shape[0] == v.shape[0] == t.shape[0]):
            raise DimensionError(f"batch sizes differ: {a.shape[0]}, {v.shape[0]}, {t.shape[0]}")
        out = self.graph(params if params is not None else self.tensors(), a, v, t)
        return out.reshape(NUM_CLASSES) if single else out

    def logits(self, a, v, t) -> np.ndarray:
        return np.array(self.forward(a, v, t).data)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _mlp(p: Mapping[str, Tensor], x: Tensor, prefix: str) -> Tensor:
    h = ad.relu(x @ p[prefix + "w1"] + p[prefix + "b1"])
    return h @ p[prefix + "w2"] + p[prefix + "b2"]


def _mlp_init(rng, d_in: int, hidden: int, d_out: int, prefix: str) -> dict[str, np.ndarray]:
    return {
        prefix + "w1": _linear_init(rng, d_in, hidden),
        prefix + "b1": np.zeros(hidden),
        prefix + "w2": _linear_init(rng, hidden, d_out),
        prefix + "b2": np.zeros(d_out),
    }


def _projection_init(rng, widths, d_model: int) -> dict[str, np.ndarray]:
    p = {}
    for name, width in zip(("audio", "video", "text"), widths):
        p[f"proj.{name}.w"] = _linear_init(rng, width, d_model)
        p[f"proj.{name}.b"] = np.zeros(d_model)
    return p


def _project(p: Mapping[str, Tensor], x: Tensor, name: str) -> Tensor:
    return x @ p[f"proj.{name}.w"] + p[f"proj.{name}.b"]


class AudioOnlyModel(Classifier):
    """Audio MLP ``d_a -> hidden -> 6``; video and text are ignored."""

    architecture = "audio"

    @classmethod
    def create(cls, d_a: int, d_v: int, d_t: int, *, hidden: int = 128, seed: int = 0) -> AudioOnlyModel:
        rng = np.random.default_rng([seed, 1])
        hp = {"d_a": d_a, "d_v": d_v, "d_t": d_t, "hidden": hidden, "seed": seed}
        return cls(hp, _mlp_init(rng, d_a, hidden, NUM_CLASSES, "mlp."))

    def graph(self, p, a, v, t):
        return _mlp(p, a, "mlp.")


class BaselineModel(Classifier):
    """Per-modality projections, concatenation, then ``3*d_model -> hidden -> 6``."""

    architecture = "baseline"

    @classmethod
    def create(
        cls, d_a: int, d_v: int, d_t: int, *, d_model: int = 128, hidden: int = 128, seed: int = 0
    ) -> BaselineModel:
        rng = np.random.default_rng([seed, 2])
        hp = {"d_a": d_a, "d_v": d_v, "d_t": d_t, "d_model": d_model, "hidden": hidden, "seed": seed}
        params = _projection_init(rng, (d_a, d_v, d_t), d_model)
        params.update(_mlp_init(rng, 3 * d_model, hidden, NUM_CLASSES, "mlp."))
        return cls(hp, params)

    def graph(self, p, a, v, t):
        x = ad.concat([_project(p, a, "audio"), _project(p, v, "video"), _project(p, t, "text")], axis=-1)
        return _mlp(p, x, "mlp.")


class AgtModel(Classifier):
    """Audio-guided transformer fusion.

    ``X_f = AMF(pool(CBT_av([A, V])), pool(CBT_at([A, T])))`` followed by a
    linear head to 6 logits.
    """

    architecture = "agt"

    @classmethod
    def create(
        cls,
        d_a: int,
        d_v: int,
        d_t: int,
        *,
        d_model: int = 128,
        n_heads: int = 4,
        d_ff: int = 256,
        n_layers: int = 2,
        amf_threshold: float = 0.2,
        residual_init_scale: float = 1.0,
        seed: int = 0,
    ) -> AgtModel:
        """``residual_init_scale`` multiplies the initial attention output and
        second feed-forward weights; 0 starts every block as the identity."""
        if d_model % n_heads:
            raise ConfigError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        if d_ff < d_model:
            raise ConfigError(f"d_ff={d_ff} must be >= d_model={d_model}")
        AmfParams(amf_threshold)
        rng = np.random.default_rng([seed, 3])
        hp = {
            "d_a": d_a, "d_v": d_v, "d_t": d_t, "d_model": d_model, "n_heads": n_heads,
            "d_ff": d_ff, "n_layers": n_layers, "amf_threshold": amf_threshold,
            "residual_init_scale": residual_init_scale, "seed": seed,
        }
        params = _projection_init(rng, (d_a, d_v, d_t), d_model)
        for stream in ("av", "at"):
            for i in range(n_layers):
                block = init_cbt_block(rng, d_model, d_ff, f"{stream}.{i}.")
                for key in (f"{stream}.{i}.attn.w_o", f"{stream}.{i}.ff.w2"):
                    block[key] = block[key] * residual_init_scale
                params.update(block)
        params["head.w"] = _linear_init(rng, d_model, NUM_CLASSES)
        params["head.b"] = np.zeros(NUM_CLASSES)
        return cls(hp, params)

    def blocks(self, p: Mapping[str, Tensor], stream: str) -> list[CbtBlockParams]:
        return [
            CbtBlockParams.from_mapping(p, f"{stream}.{i}.", self.hparams["n_heads"])
            for i in range(self.hparams["n_layers"])
        ]

    def fused(self, p: Mapping[str, Tensor], a: Tensor, v: Tensor, t: Tensor) -> tuple[Tensor, np.ndarray]:
        """The gated fused feature ``[batch, d_model]`` and the AMF mask ``[2, batch]``."""
        A, V, T = _project(p, a, "audio"), _project(p, v, "video"), _project(p, t, "text")
        pooled = []
        for stream, other in (("av", V), ("at", T)):
            x = ad.stack([A, other], axis=-2)  # [batch, 2, d_model]
            for block in self.blocks(p, stream):
                x = cbt_forward(x, block)
            pooled.append(x.mean(axis=-2))
        return amf_gate(pooled, AmfParams(self.hparams["amf_threshold"]))

    def graph(self, p, a, v, t):
        fused, _ = self.fused(p, a, v, t)
        return fused @ p["head.w"] + p["head.b"]


ARCHITECTURES: dict[str, type[Classifier]] = {
    cls.architecture: cls for cls in (AudioOnlyModel, BaselineModel, AgtModel)
}


def agt_forward(a, v, t, m: AgtModel, params: Mapping[str, Tensor] | None = None) -> Tensor:
    return m.forward(a, v, t, params)


def baseline_forward(a, v, t, m: BaselineModel, params: Mapping[str, Tensor] | None = None) -> Tensor:
    return m.forward(a, v, t, params)


def audio_forward(a, v, t, m: AudioOnlyModel, params: Mapping[str, Tensor] | None = None) -> Tensor:
    return m.forward(a, v, t, params)


# ---------------------------------------------------------------- alignment


def contrastive_loss(v, t, tau: float = 0.07) -> Tensor:
    """Temperature-scaled contrastive loss over a batch of paired embeddings.

    Rows of ``v`` and ``t`` are expected to be unit-norm, so ``v @ t.T`` holds
    cosine similarities.  Returns the *sum* over rows of
    ``-log softmax_j(sim(v_i, t_j) / tau)[i]``.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    v, t = ad.as_tensor(v), ad.as_tensor(t)
    if v.ndim != 2 or v.shape != t.shape or v.shape[0] < 1:
        raise DimensionError(f"contrastive_loss needs equal [b, d] inputs, got {v.shape} and {t.shape}")
    logp = ad.log_softmax((v @ t.T) * (1.0 / tau), axis=1)
    rows = np.arange(v.shape[0])
    return -(logp[rows, rows].sum())


@dataclass(frozen=True, eq=False)
class AlignmentHead:
    """Projects video and text embeddings into a shared unit-norm space."""

    w_v: np.ndarray
    w_t: np.ndarray
    tau: float = 0.07

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.w_v.shape[1] != self.w_t.shape[1]:
            raise DimensionError(f"projection widths differ: {self.w_v.shape} vs {self.w_t.shape}")

    @classmethod
    def create(cls, d_v: int, d_t: int, d_align: int = 32, tau: float = 0.07, seed: int = 0) -> AlignmentHead:
        rng = np.random.default_rng([seed, 4])
        return cls(_linear_init(rng, d_v, d_align), _linear_init(rng, d_t, d_align), tau)

    def embed(self, video, text, w_v: Tensor | None = None, w_t: Tensor | None = None) -> tuple[Tensor, Tensor]:
        w_v = Tensor(self.w_v) if w_v is None else w_v
        w_t = Tensor(self.w_t) if w_t is None else w_t
        return ad.l2_normalize(ad.as_tensor(video) @ w_v), ad.l2_normalize(ad.as_tensor(text) @ w_t)

    def loss(self, video, text) -> Tensor:
        ev, et = self.embed(video, text)
        return contrastive_loss(ev, et, self.tau)


def train_alignment(
    head: AlignmentHead,
    video: np.ndarray,
    text: np.ndarray,
    *,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 1e-2,
    seed: int = 0,
) -> tuple[AlignmentHead, list[float]]:
    """Fit the alignment projections with Adam on the contrastive loss."""
    video, text = np.asarray(video, dtype=np.float64), np.asarray(text, dtype=np.float64)
    n = video.shape[0]
    params = {"w_v": head.w_v, "w_t": head.w_t}
    state = ad.adam_init(params)
    rng = np.random.default_rng([seed, 0xA11])
    curve = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            leaves = {k: Tensor(p, requires_grad=True) for k, p in params.items()}
            with Tape() as tape:
                ev, et = head.embed(video[idx], text[idx], leaves["w_v"], leaves["w_t"])
                loss = contrastive_loss(ev, et, head.tau)
                tape.backward(loss)
            params, state = ad.adam_step(params, {k: t.grad for k, t in leaves.items()}, state, lr)
            total += loss.item()
        curve.append(total / n)
    return AlignmentHead(params["w_v"], params["w_t"], head.tau), curve


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: Classifier
    losses: list[float] = field(default_factory=list)


def _check_widths(model: Classifier, dataset: Dataset) -> None:
    if len(dataset) and tuple(dataset.widths) != tuple(model.widths):
        raise DimensionError(f"dataset widths {dataset.widths} do not match model widths {model.widths}")


def train(model: Classifier, dataset: Dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch Adam on mean cross-entropy; the shuffle order depends only on ``config.seed``."""
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    unlabeled = [s.id for s in dataset if s.label is None]
    if unlabeled:
        raise DataError(f"training set contains {len(unlabeled)} unlabeled sample(s), e.g. {unlabeled[:3]}")
    _check_widths(model, dataset)
    a, v, t = dataset.arrays()
    y = dataset.labels()
    n = len(dataset)
    params = {k: np.asarray(p) for k, p in model.params.items()}
    state = ad.adam_init(params)
    rng = np.random.default_rng([config.seed, 0x7EA1])
    losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            leaves = {k: Tensor(p, requires_grad=True) for k, p in params.items()}
            try:
                with Tape() as tape:
                    loss = ad.cross_entropy(model.graph(leaves, Tensor(a[idx]), Tensor(v[idx]), Tensor(t[idx])), y[idx])
                    tape.backward(loss)
                grads = {k: leaf.grad for k, leaf in leaves.items()}
                params, state = ad.adam_step(
                    params, grads, state, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay
                )
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"{model.architecture}: training aborted at epoch {epoch}, batch starting {start}: {exc}"
                ) from exc
            total += loss.item() * idx.size
        losses.append(total / n)
        logger.debug("%s epoch %d loss %.6f", model.architecture, epoch, losses[-1])
    return TrainResult(model.with_params(params), losses)


def predict(model: Classifier, dataset: Dataset, batch_size: int = 512) -> list[PredictionRecord]:
    """Softmax probabilities per sample, in dataset order."""
    _check_widths(model, dataset)
    a, v, t = dataset.arrays()
    out = []
    ids = dataset.ids
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        probs = ad.softmax(model.forward(a[sl], v[sl], t[sl]), axis=-1).data
        out.extend(PredictionRecord(i, row) for i, row in zip(ids[sl], probs))
    return out


# ---------------------------------------------------------------- model files


def model_to_json(model: Classifier) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture": model.architecture,
        "hyperparameters": dict(model.hparams),
        "parameters": {k: np.asarray(v).tolist() for k, v in sorted(model.params.items())},
    }


def model_from_json(doc: Mapping) -> Classifier:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {version!r}")
    arch = doc.get("architecture")
    if arch not in ARCHITECTURES:
        raise DataError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHITECTURES)}")
    cls = ARCHITECTURES[arch]
    hp = dict(doc["hyperparameters"])
    try:
        template = cls.create(**hp)
    except TypeError as exc:
        raise DataError(f"bad hyperparameters for {arch!r}: {exc}") from None
    params = {}
    for name, ref in template.params.items():
        if name not in doc["parameters"]:
            raise DataError(f"model file lacks parameter {name!r}")
        arr = np.array(doc["parameters"][name], dtype=np.float64)
        if arr.shape != ref.shape:
            raise DataError(f"parameter {name!r} has shape {arr.shape}, expected {ref.shape}")
        params[name] = arr
    extra = set(doc["parameters"]) - set(params)
    if extra:
        raise DataError(f"model file has unexpected parameters {sorted(extra)}")
    return cls(hp, params)


def save_model(model: Classifier, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(model_to_json(model), separators=(",", ":")) + "\n")


def load_model(path: str | Path) -> Classifier:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model file: {exc}") from None
    return model_from_json(doc)


def create_model(architecture: str, widths: Sequence[int], **hparams) -> Classifier:
    """Build a fresh model by architecture tag, ignoring hyperparameters it does not use."""
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {architecture!r}; expected one of {sorted(ARCHITECTURES)}")
    cls = ARCHITECTURES[architecture]
    accepted = inspect.signature(cls.create).parameters
    kw = {k: v for k, v in hparams.items() if k in accepted}
    return cls.create(*widths, **kw)
