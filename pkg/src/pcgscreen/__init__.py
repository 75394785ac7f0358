"""Paediatric heart-sound screening: quality gate, MFCC features and a conv-transformer classifier."""
from .core import (DurationClass, Label, PcgError, PcgRecording, Position, RunConfig, Segment,
                   make_rng, split_recording)
from .features import FrameParams, extract_features
from .preprocess import FilterSpec, preprocess_segment
from .quality import QualityReport, assess_quality

__all__ = [
    "DurationClass", "FilterSpec", "FrameParams", "Label", "PcgError", "PcgRecording", "Position",
    "QualityReport", "RunConfig", "Segment", "assess_quality", "extract_features", "make_rng",
    "preprocess_segment", "split_recording",
]
__version__ = "0.1.0"
