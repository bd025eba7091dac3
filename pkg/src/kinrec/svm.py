"""Class-weighted, L2-regularized squared-hinge linear classifier.

The bias is folded into the weight vector through a constant-1 feature, so
it is regularized like every other coordinate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyClass, NonFinite

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 10.0


def class_weights(n_pos: int, n_neg: int, lam: float = DEFAULT_LAMBDA) -> tuple[float, float]:
    """Per-class loss weights, inversely proportional to class frequency."""
    if n_pos < 1 or n_neg < 1:
        raise EmptyClass(f"need both classes, got {n_pos} positives and {n_neg} negatives")
    total = n_pos + n_neg
    return lam * total / (2 * n_pos), lam * total / (2 * n_neg)


def augment(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def objective(w, Xa, y, c) -> float:
    margin = np.maximum(0.0, 1.0 - y * (Xa @ w))
    return float(0.5 * w @ w + np.sum(c * margin * margin))


def gradient(w, Xa, y, c) -> np.ndarray:
    margin = np.maximum(0.0, 1.0 - y * (Xa @ w))
    return w - 2.0 * Xa.T @ (c * margin * y)


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    lambda_pos: float
    lambda_neg: float
    objective: float
    n_iter: int = 0
    converged: bool = True

    @property
    def dim(self) -> int:
        return self.w.size - 1

    @property
    def bias(self) -> float:
        return float(self.w[-1])


def decision(model: LinearModel, x):
    """w^T [x; 1] for one vector (float) or for each row of a matrix (array)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise DimensionMismatch(f"model expects dimension {model.dim}, got {x.shape[-1]}")
    out = x @ model.w[:-1] + model.w[-1]
    return float(out) if x.ndim == 1 else out


def training_problem(pos, neg, lam: float = DEFAULT_LAMBDA):
    """Augmented design matrix, +-1 targets and per-sample weights."""
    P = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    N = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if P.size == 0 or N.size == 0:
        raise EmptyClass("both positive and negative samples are required")
    if P.shape[1] != N.shape[1]:
        raise DimensionMismatch(f"positives have dimension {P.shape[1]}, negatives {N.shape[1]}")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(N))):
        raise NonFinite("training data has non-finite entries")
    lp, ln = class_weights(P.shape[0], N.shape[0], lam)
    Xa = augment(np.vstack([P, N]))
    y = np.concatenate([np.ones(P.shape[0]), -np.ones(N.shape[0])])
    c = np.concatenate([np.full(P.shape[0], lp), np.full(N.shape[0], ln)])
    return Xa, y, c, lp, ln


def train_cwsvm(pos, neg, lam: float = DEFAULT_LAMBDA, tol: float = 1e-8,
                max_iter: int = 5000, gtol: float = 1e-10) -> LinearModel:
    """Fit the class-weighted squared-hinge SVM by gradient descent.

    Starts from w = 0 and takes Barzilai-Borwein steps safeguarded by Armijo
    backtracking, so the objective decreases monotonically. Stops once the
    relative objective change falls below ``tol`` and the gradient norm is
    below ``gtol`` times its initial value.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    Xa, y, c, lp, ln = training_problem(pos, neg, lam)
    w = np.zeros(Xa.shape[1])
    f = objective(w, Xa, y, c)
    g = gradient(w, Xa, y, c)
    g0 = max(np.linalg.norm(g), 1e-300)
    # 1 / Lipschitz bound of the gradient as the first trial step
    step = 1.0 / (1.0 + 2.0 * np.max(c) * np.sum(Xa * Xa))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = g @ g
        if gnorm2 == 0.0:
            converged = True
            break
        t = step
        while True:
            w_new = w - t * g
            f_new = objective(w_new, Xa, y, c)
            if f_new <= f - 1e-4 * t * gnorm2 or t < 1e-20:
                break
            t *= 0.5
        g_new = gradient(w_new, Xa, y, c)
        s, d = w_new - w, g_new - g
        sd = s @ d
        step = (s @ s) / sd if sd > 0 else t
        rel = abs(f - f_new) / max(abs(f), 1e-300)
        w, f, g = w_new, f_new, g_new
        if rel < tol and np.linalg.norm(g) <= gtol * g0:
            converged = True
            break
    if not np.all(np.isfinite(w)):
        raise NonFinite("solver diverged")
    logger.debug("train_cwsvm: %d iterations, objective %.10g", it, f)
    return LinearModel(w, lp, ln, f, it, converged)
