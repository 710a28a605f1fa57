"""Dual-path attention audio-visual target speech extraction."""

from .config import ModelConfig
from .estimator import AVTargetExtractor
from .model import DualPathAVModel

__version__ = "0.1.0"

__all__ = ["AVTargetExtractor", "DualPathAVModel", "ModelConfig"]
