"""Adversarial feature debiasing with a gradient-reversal adapter.

A mapping ``M: R^d -> R^(d/2)`` (affine + tanh) feeds two softmax heads, one
for identity and one for the subgroup attribute. The heads minimize their own
cross-entropy; the mapping minimizes ``L_ID - lambda * L_ATT``, i.e. the
attribute gradient reaching the mapping is reversed and scaled by lambda.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidHyperparameters, NonFinite
from .evaluation import confusion_matrix

logger = logging.getLogger(__name__)

MAPPING_KEYS = ("M.W", "M.b")
HEAD_KEYS = ("ID.W", "ID.b", "ATT.W", "ATT.b")


@dataclass(frozen=True)
class LabeledFeature:
    x: np.ndarray
    y_id: int
    y_att: int


@dataclass
class DebiasModel:
    params: dict
    lam: float
    n_id: int
    n_att: int

    @property
    def in_dim(self) -> int:
        return self.params["M.W"].shape[1]

    @property
    def out_dim(self) -> int:
        return self.params["M.W"].shape[0]

    def copy(self) -> "DebiasModel":
        return DebiasModel({k: v.copy() for k, v in self.params.items()}, self.lam,
                           self.n_id, self.n_att)

    def to_json(self) -> dict:
        return {"lambda": self.lam, "n_id": self.n_id, "n_att": self.n_att,
                "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                           for k, v in sorted(self.params.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "DebiasModel":
        params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in obj["params"].items()}
        return cls(params, float(obj["lambda"]), int(obj["n_id"]), int(obj["n_att"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DebiasModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def init_model(d: int, n_id: int, n_att: int, lam: float, seed: int = 0,
               head_scale: float = 0.0) -> DebiasModel:
    """Random mapping (scaled normal), heads zero unless ``head_scale`` > 0."""
    if d < 2 or n_id < 1 or n_att < 1:
        raise InvalidHyperparameters("need d >= 2 and at least one class per head")
    if lam < 0 or not np.isfinite(lam):
        raise InvalidHyperparameters(f"lambda must be non-negative, got {lam}")
    h = d // 2
    rng = np.random.default_rng(seed)
    params = {
        "M.W": rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d)),
        "M.b": np.zeros(h),
        "ID.W": head_scale * rng.normal(size=(n_id, h)),
        "ID.b": np.zeros(n_id),
        "ATT.W": head_scale * rng.normal(size=(n_att, h)),
        "ATT.b": np.zeros(n_att),
    }
    return DebiasModel(params, float(lam), n_id, n_att)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.in_dim:
        raise DimensionMismatch(f"model expects dimension {model.in_dim}, got {X.shape[-1]}")
    return X


def transform(model: DebiasModel, X) -> np.ndarray:
    X = _check_input(model, X)
    p = model.params
    return np.tanh(X @ p["M.W"].T + p["M.b"])


def forward(model: DebiasModel, x):
    """Debiased feature plus identity and attribute class probabilities."""
    x = _check_input(model, x)
    p = model.params
    f = transform(model, x)
    id_probs = softmax(f @ p["ID.W"].T + p["ID.b"])
    att_probs = softmax(f @ p["ATT.W"].T + p["ATT.b"])
    return f, id_probs, att_probs


def _batch(batch):
    if isinstance(batch, tuple) and len(batch) == 3:
        X, y_id, y_att = batch
    else:
        X = np.vstack([b.x for b in batch])
        y_id = [b.y_id for b in batch]
        y_att = [b.y_att for b in batch]
    return (np.asarray(X, dtype=np.float64), np.asarray(y_id, dtype=np.int64),
            np.asarray(y_att, dtype=np.int64))


def nll(probs, y) -> float:
    """Mean negative log-likelihood of the true classes."""
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def losses(model: DebiasModel, batch) -> tuple[float, float, float]:
    """(L_ID, L_ATT, L_ID + L_ATT) on a batch."""
    X, y_id, y_att = _batch(batch)
    _, pid, patt = forward(model, X)
    l_id, l_att = nll(pid, y_id), nll(patt, y_att)
    return l_id, l_att, l_id + l_att


def mapping_objective(model: DebiasModel, batch) -> float:
    l_id, l_att, _ = losses(model, batch)
    return l_id - model.lam * l_att


def gradient_parts(model: DebiasModel, batch) -> dict:
    """Unreversed gradients of each loss.

    Keys: ``ID`` and ``ATT`` map to dicts holding the gradient of that loss
    with respect to its own head and to the mapping parameters.
    """
    X, y_id, y_att = _batch(batch)
    p = model.params
    n = X.shape[0]
    f = np.tanh(X @ p["M.W"].T + p["M.b"])
    dtanh = 1.0 - f * f
    parts = {}
    for head, y in (("ID", y_id), ("ATT", y_att)):
        probs = softmax(f @ p[f"{head}.W"].T + p[f"{head}.b"])
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        dz = (delta @ p[f"{head}.W"]) * dtanh
        parts[head] = {f"{head}.W": delta.T @ f, f"{head}.b": delta.sum(axis=0),
                       "M.W": dz.T @ X, "M.b": dz.sum(axis=0)}
    return parts


def backward(model: DebiasModel, batch) -> dict:
    """Gradients for every parameter, with the attribute signal reversed at M."""
    parts = gradient_parts(model, batch)
    grads = {k: parts["ID"][k] for k in ("ID.W", "ID.b")}
    grads.update({k: parts["ATT"][k] for k in ("ATT.W", "ATT.b")})
    for k in MAPPING_KEYS:
        grads[k] = parts["ID"][k] - model.lam * parts["ATT"][k]
    return grads


@dataclass
class TrainingHistory:
    l_id: list = field(default_factory=list)
    l_att: list = field(default_factory=list)


def train_debias(data, n_id: Optional[int] = None, n_att: Optional[int] = None,
                 lam: float = 1.0, epochs: int = 10, lr: float = 1e-3, seed: int = 0,
                 batch_size: int = 64, head_lr: Optional[float] = None):
    """Plain minibatch SGD on the adversarial objective.

    Args:
        data: list of :class:`LabeledFeature` or a tuple ``(X, y_id, y_att)``.
        head_lr: learning rate of the two heads (defaults to ``lr``).

    Returns:
        ``(model, history)``; history holds full-data losses after each epoch.
    """
    if epochs < 0 or lr <= 0 or batch_size < 1 or lam < 0 or not np.isfinite(lam):
        raise InvalidHyperparameters(
            f"invalid hyperparameters: epochs={epochs}, lr={lr}, batch={batch_size}, lambda={lam}")
    X, y_id, y_att = _batch(data)
    n_id = int(y_id.max()) + 1 if n_id is None else n_id
    n_att = int(y_att.max()) + 1 if n_att is None else n_att
    model = init_model(X.shape[1], n_id, n_att, lam, seed)
    head_lr = lr if head_lr is None else head_lr
    rng = np.random.default_rng(seed + 1)
    history = TrainingHistory()
    for epoch in range(epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            idx = order[start:start + batch_size]
            grads = backward(model, (X[idx], y_id[idx], y_att[idx]))
            for k, g in grads.items():
                model.params[k] -= (lr if k in MAPPING_KEYS else head_lr) * g
        l_id, l_att, _ = losses(model, (X, y_id, y_att))
        if not (np.isfinite(l_id) and np.isfinite(l_att)):
            raise NonFinite(f"training diverged at epoch {epoch + 1}")
        history.l_id.append(l_id)
        history.l_att.append(l_att)
        logger.debug("epoch %d: L_ID=%.4f L_ATT=%.4f", epoch + 1, l_id, l_att)
    return model, history


class MLPProbe:
    """ReLU multilayer perceptron classifier trained with Adam.

    Dropout (if any) is active only while training.
    """

    def __init__(self, hidden=(512, 512, 256), epochs=30, lr=1e-3, batch_size=64,
                 dropout=0.0, seed=0):
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.dropout = dropout
        self.seed = seed

    def _forward(self, X, rng=None):
        acts = [X]
        masks = []
        h = X
        for i, (W, b) in enumerate(self.layers):
            z = h @ W + b
            if i == len(self.layers) - 1:
                return acts, masks, z
            h = np.maximum(z, 0.0)
            if rng is not None and self.dropout > 0:
                m = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                h = h * m
            else:
                m = None
            masks.append(m)
            acts.append(h)

    def fit(self, X, y, n_classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(y.max()) + 1 if n_classes is None else n_classes
        rng = np.random.default_rng(self.seed)
        sizes = (X.shape[1],) + self.hidden + (self.n_classes,)
        self.layers = [(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)), np.zeros(b))
                       for a, b in zip(sizes[:-1], sizes[1:])]
        m = [[np.zeros_like(W), np.zeros_like(b)] for W, b in self.layers]
        v = [[np.zeros_like(W), np.zeros_like(b)] for W, b in self.layers]
        b1, b2, eps = 0.9, 0.999, 1e-8
        t = 0
        for _ in range(self.epochs):
            order = rng.permutation(X.shape[0])
            for start in range(0, X.shape[0], self.batch_size):
                idx = order[start:start + self.batch_size]
                acts, masks, logits = self._forward(X[idx], rng)
                delta = softmax(logits)
                delta[np.arange(idx.size), y[idx]] -= 1.0
                delta /= idx.size
                t += 1
                for i in range(len(self.layers) - 1, -1, -1):
                    W, b = self.layers[i]
                    gW, gb = acts[i].T @ delta, delta.sum(axis=0)
                    if i > 0:
                        delta = (delta @ W.T) * (acts[i] > 0)
                        if masks[i - 1] is not None:
                            delta = delta * masks[i - 1]
                    for j, g in enumerate((gW, gb)):
                        m[i][j] = b1 * m[i][j] + (1 - b1) * g
                        v[i][j] = b2 * v[i][j] + (1 - b2) * g * g
                        mh = m[i][j] / (1 - b1 ** t)
                        vh = v[i][j] / (1 - b2 ** t)
                        self.layers[i][j][...] -= self.lr * mh / (np.sqrt(vh) + eps)
        return self

    def predict(self, X):
        _, _, logits = self._forward(np.asarray(X, dtype=np.float64))
        return np.argmax(logits, axis=1)


def kfold_ids(n: int, k: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    folds = np.arange(n) % k
    return folds[rng.permutation(n)]


def leakage_probe(features, labels, folds=5, seed: int = 0, **probe_opts) -> dict:
    """Cross-validated MLP accuracy at predicting ``labels`` from ``features``.

    ``folds`` is a fold count or an explicit per-sample fold id array.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    fold_ids = kfold_ids(len(y), folds, seed) if np.isscalar(folds) else np.asarray(folds)
    n_classes = int(y.max()) + 1
    pred = np.empty_like(y)
    per_fold = {}
    for f in np.unique(fold_ids):
        test = fold_ids == f
        probe = MLPProbe(seed=seed + int(f), **probe_opts).fit(X[~test], y[~test], n_classes)
        pred[test] = probe.predict(X[test])
        per_fold[int(f)] = float(np.mean(pred[test] == y[test]))
    return {"accuracy": float(np.mean(pred == y)), "per_fold": per_fold,
            "confusion": confusion_matrix(pred, y, list(range(n_classes))),
            "chance": 1.0 / n_classes}


def planted_features(n_id: int = 10, n_att: int = 2, per_cell: int = 20, d: int = 32,
                     id_scale: float = 1.0, att_scale: float = 1.0, noise: float = 0.3,
                     seed: int = 0):
    """Synthetic features with identity means and subgroup offsets in
    orthogonal coordinate blocks; subgroup is independent of identity.

    Returns ``(X, y_id, y_att)``.
    """
    rng = np.random.default_rng(seed)
    half = d // 2
    id_means = np.zeros((n_id, d))
    id_means[:, :half] = id_scale * rng.normal(size=(n_id, half)) / np.sqrt(half) * 2.0
    att_dirs = np.zeros((n_att, d))
    att_dirs[:, half:] = rng.normal(size=(n_att, d - half))
    att_dirs /= np.linalg.norm(att_dirs, axis=1, keepdims=True)
    y_id = np.repeat(np.arange(n_id), n_att * per_cell)
    y_att = np.tile(np.repeat(np.arange(n_att), per_cell), n_id)
    X = id_means[y_id] + att_scale * att_dirs[y_att] + noise * rng.normal(size=(y_id.size, d))
    return X, y_id, y_att
