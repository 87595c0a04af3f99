"""Frozen feature space and alignment / forgetting metrics."""
from .extractor import FeatureExtractor, fit_extractor, load_extractor, save_extractor
from .harness import evaluate_multi_concept, evaluate_sequence, per_concept_table
from .metrics import AlignmentMatrix, image_alignment, text_alignment, tfr

__all__ = [
    "AlignmentMatrix",
    "FeatureExtractor",
    "evaluate_multi_concept",
    "evaluate_sequence",
    "fit_extractor",
    "image_alignment",
    "load_extractor",
    "per_concept_table",
    "save_extractor",
    "text_alignment",
    "tfr",
]
