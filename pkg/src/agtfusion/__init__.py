"""Audio-guided transformer fusion for six-way multimodal emotion recognition.

A small numpy stack: a tape-based autodiff core, transformer fusion blocks,
three classifiers (audio-only MLP, concat baseline, audio-guided
transformer), pseudo-label self-training, regularized voting and F1
evaluation.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor
from .data import Dataset, EmotionLabel, PredictionRecord, Sample, generate_synthetic, read_jsonl, write_jsonl
from .errors import AgtFusionError, ConfigError, DataError, DimensionError, NonFiniteError
from .metrics import confusion_matrix, f1_scores
from .models import AgtModel, AudioOnlyModel, BaselineModel, TrainConfig, create_model, predict, train
from .semisup import self_train
from .vote import VoteConfig, vote_all

__all__ = [
    "Tape",
    "Tensor",
    "Dataset",
    "EmotionLabel",
    "PredictionRecord",
    "Sample",
    "generate_synthetic",
    "read_jsonl",
    "write_jsonl",
    "AgtFusionError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "NonFiniteError",
    "confusion_matrix",
    "f1_scores",
    "AgtModel",
    "AudioOnlyModel",
    "BaselineModel",
    "TrainConfig",
    "create_model",
    "predict",
    "train",
    "self_train",
    "VoteConfig",
    "vote_all",
]
