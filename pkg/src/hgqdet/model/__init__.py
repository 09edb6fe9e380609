from .detector import (
    DecoderOutput,
    DetectorOutput,
    FeaturePyramid,
    HeatmapQueryDetector,
    Memory,
    ModelConfig,
    QuerySet,
)
from .encoding import bilinear_sample, encode_positions, positional_encoding_2d

__all__ = [
    "DecoderOutput",
    "DetectorOutput",
    "FeaturePyramid",
    "HeatmapQueryDetector",
    "Memory",
    "ModelConfig",
    "QuerySet",
    "bilinear_sample",
    "encode_positions",
    "positional_encoding_2d",
]
