"""Facial affect toolkit: single-task and shared-backbone multi-task models
for valence/arousal regression, 8-class expression recognition, and 12-AU
detection, with masked losses, late fusion, and challenge-style scoring.
"""

from .annotations import (
    AffectSample,
    AnnotationError,
    ClassWeights,
    DatasetStats,
    compute_class_weights,
    compute_stats,
    load_annotations,
    save_annotations,
)
from .fusion import FusionWeights, fuse, fuse_all, search_lambda
from .metrics import EvalReport, concordance_ccc, evaluate, f1_binary, macro_f1_expr
from .records import FinalPrediction, PredictionRecord

__version__ = "0.1.0"

__all__ = [
    "AffectSample",
    "AnnotationError",
    "ClassWeights",
    "DatasetStats",
    "EvalReport",
    "FinalPrediction",
    "FusionWeights",
    "PredictionRecord",
    "compute_class_weights",
    "compute_stats",
    "concordance_ccc",
    "evaluate",
    "f1_binary",
    "fuse",
    "fuse_all",
    "load_annotations",
    "macro_f1_expr",
    "save_annotations",
    "search_lambda",
    "__version__",
]
