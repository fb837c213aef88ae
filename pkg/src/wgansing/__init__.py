"""Block-wise Wasserstein-GAN synthesizer for singing-voice vocoder features."""

from .conditioning import ConditioningConfig, FrameAnnotations, assemble_block
from .data import Dataset, NormStats, load_corpus, make_toy_corpus
from .evaluation import McdResult, evaluate_holdout, mcd
from .inference import synthesize_track, triangular_window
from .model import ModelConfig, Networks
from .training import LossReport, TrainingConfig, train

__all__ = [
    "ConditioningConfig", "FrameAnnotations", "assemble_block", "Dataset", "NormStats", "load_corpus",
    "make_toy_corpus", "McdResult", "evaluate_holdout", "mcd", "synthesize_track", "triangular_window",
    "ModelConfig", "Networks", "LossReport", "TrainingConfig", "train",
]
