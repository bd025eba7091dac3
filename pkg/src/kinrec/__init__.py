"""Kinship and face-verification research toolkit operating on precomputed embeddings."""
from .core import Dataset, Embedding, Modality, cosine_similarity, l2_normalize, read_embeddings
from .errors import KinrecError

__version__ = "0.1.0"

__all__ = ["Dataset", "Embedding", "KinrecError", "Modality", "cosine_similarity",
           "l2_normalize", "read_embeddings"]
