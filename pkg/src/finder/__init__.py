"""Audio-deepfake source-attribution toolkit.

Trains FCN/CNN downstream classifiers over pre-extracted speech-model
representations and the two-branch fusion network whose objective combines
cross-entropy with a Renyi-divergence alignment term between branch
projections.
"""

from .autodiff import Tape, Tensor, backward
from .losses import LossBreakdown, RenyiParams, combined_loss, cross_entropy, renyi_divergence
from .models import Model, ModelConfig
from .training import TrainConfig, run_experiment, train_fold

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "LossBreakdown",
    "RenyiParams",
    "combined_loss",
    "cross_entropy",
    "renyi_divergence",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "run_experiment",
    "train_fold",
    "__version__",
]
