"""Multimodal multi-label genre classification with late score fusion."""

from .data import GENRES, ModalityScores
from .encoders import EncoderConfig, FeatureSequence, SequenceClassifier, TrainConfig
from .fusion import FusionModel
from .metrics import EvalReport

__version__ = "0.1.0"

__all__ = [
    "GENRES", "ModalityScores", "EncoderConfig", "FeatureSequence", "SequenceClassifier",
    "TrainConfig", "FusionModel", "EvalReport",
]
