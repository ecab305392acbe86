"""Evaluation engine for contrastive vision-language embeddings.

Measures two failure modes on precomputed embeddings: inconsistency
across label granularity (two-level and multi-level protocols) and
similarity-versus-correctness confusion in image-to-text retrieval
(hard positive and hard negative grid).
"""

__version__ = "0.1.0"

from .hierarchy import Hierarchy, TwoLevelMap, build_hierarchy
from .metrics import average_precision, multilabel_map, spearman, top1_accuracy
from .scoring import cosine_scores
from .store import EmbeddingMatrix, ImageRecord, ScoreMatrix, read_matrix, write_matrix

__all__ = [
    "Hierarchy",
    "TwoLevelMap",
    "build_hierarchy",
    "average_precision",
    "multilabel_map",
    "spearman",
    "top1_accuracy",
    "cosine_scores",
    "EmbeddingMatrix",
    "ImageRecord",
    "ScoreMatrix",
    "read_matrix",
    "write_matrix",
    "__version__",
]
