"""Hierarchical prototype manifolds, Semantic Surprise Vector probing and
ternary (ID / Near-OOD / Far-OOD) risk evaluation."""

from ._backend import BACKEND
from .data import EmbeddingSet, LabelHierarchy, RiskTier, load_embeddings, save_embeddings
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EmbeddingSet",
    "LabelHierarchy",
    "RiskTier",
    "SyntheticSpec",
    "generate_synthetic",
    "load_embeddings",
    "save_embeddings",
]
