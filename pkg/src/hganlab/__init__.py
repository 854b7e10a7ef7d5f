"""Hybrid GAN laboratory: adversarial distillation of an autoregressive teacher."""

from .data import DatasetConfig
from .models import ModeClassifier
from .training import HybridGAN, TrainConfig, train

__version__ = "0.1.0"

__all__ = ["DatasetConfig", "HybridGAN", "ModeClassifier", "TrainConfig", "train"]
