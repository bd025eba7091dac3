"""Pairwise decisions and probe-by-reference score matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Embedding, normalize_rows, stack
from .errors import DimensionMismatch, EmptySet, NonFinite


@dataclass(frozen=True)
class Threshold:
    theta: float

    def __post_init__(self):
        if not np.isfinite(self.theta):
            raise NonFinite("threshold must be finite")


def match_decision(score: float, theta) -> bool:
    """Accept (genuine / KIN) iff ``score`` is strictly above the threshold."""
    if isinstance(theta, Threshold):
        theta = theta.theta
    return bool(score > theta)


def cosine_matrix(P, R) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if P.shape[1] != R.shape[1]:
        raise DimensionMismatch(f"dimension {P.shape[1]} != {R.shape[1]}")
    S = normalize_rows(P) @ normalize_rows(R).T
    return np.clip(S, -1.0, 1.0)


def score_matrix(probe: list[Embedding], reference: list[Embedding]) -> np.ndarray:
    """Cosine scores, rows indexed by probe and columns by reference."""
    if not probe or not reference:
        raise EmptySet("score_matrix needs non-empty probe and reference lists")
    return cosine_matrix(stack(probe), stack(reference))
