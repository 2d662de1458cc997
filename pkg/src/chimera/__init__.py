"""End-to-end log-based fault diagnosis: a jointly trained anomaly detector
and root-cause localizer over parsed log windows, plus the synthetic-corpus
and evaluation harness around them."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check, no_grad
from .datagen import CorpusSpec, generate_corpus
from .evaluation import (
    RankingCase,
    bias_study,
    detection_metrics,
    quadrant_study,
    ranking_metrics,
)
from .model import DiagnosisOutput, ModelParams, diagnose, load_checkpoint, save_checkpoint
from .parsing import EventSequence, ParseTree, RawLogRecord, load_records, window_sequences
from .training import TrainConfig, TrainResult, train

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad",
    "CorpusSpec", "generate_corpus",
    "RankingCase", "bias_study", "detection_metrics", "quadrant_study", "ranking_metrics",
    "DiagnosisOutput", "ModelParams", "diagnose", "load_checkpoint", "save_checkpoint",
    "EventSequence", "ParseTree", "RawLogRecord", "load_records", "window_sequences",
    "TrainConfig", "TrainResult", "train",
]
