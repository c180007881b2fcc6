"""
Interface definitions for the choreography toolkit.
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, List

import numpy as np

from .models import AudioClip, EvaluationResult, MetricReport, MotionSequence


class DenoiserInterface(ABC):
    """Interface for a clean-sample predictor used by the reverse chain."""

    @abstractmethod
    def predict_start(self, z_t: np.ndarray, t: int, cond: Any) -> np.ndarray:
        """Predict the clean sequence from a noisy one at step t."""
        pass


class MusicEncoderInterface(ABC):
    """Interface for the music side of the contrastive encoder."""

    @abstractmethod
    def encode_music(self, clip: AudioClip) -> np.ndarray:
        """Embed an audio clip as a unit vector."""
        pass


class DanceEncoderInterface(ABC):
    """Interface for the dance side of the contrastive encoder."""

    @abstractmethod
    def encode_dance(self, seq: MotionSequence, text: str) -> np.ndarray:
        """Embed a motion sequence and its style text as a unit vector."""
        pass


class StyleClassifierInterface(ABC):
    """Interface for a classifier producing P(style | dance)."""

    @property
    @abstractmethod
    def styles(self) -> List[str]:
        """Class names in column order."""
        pass

    @abstractmethod
    def predict_proba(self, seq: MotionSequence) -> np.ndarray:
        """Probability row over ``styles``."""
        pass


class UIControllerInterface(ABC):
    """Interface for the UI controller component."""

    @abstractmethod
    def render_evaluation_inputs(self) -> Dict[str, Any]:
        """Render evaluation input controls and return values."""
        pass

    @abstractmethod
    def display_evaluation_results(self, results: EvaluationResult) -> None:
        """Display evaluation results in the UI."""
        pass

    @abstractmethod
    def render_metric_table(self, reports: Dict[str, MetricReport]) -> None:
        """Render the metric summary table."""
        pass
