"""Partition-level semi-supervised spherical K-means and partition metrics.

The solver works on the augmented matrix ``[X | Y]`` where ``Y`` holds the
one-hot side-information rows for labeled instances and structural zeros
elsewhere. The label block only participates in distances and centroids for
labeled rows, so the structural zeros never bias the cluster structure.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, normalize_rows
from .errors import EmptyDataset, InvalidK, LengthMismatch, MalformedRecord

logger = logging.getLogger(__name__)

# relative slack when asserting the objective never increases
MONOTONE_RTOL = 1e-10


@dataclass(frozen=True)
class SideInfo:
    """Pre-labeled instances: ``assignments`` is the one-hot n' x K' matrix."""

    member_rows: np.ndarray
    assignments: np.ndarray
    classes: tuple = ()

    def __post_init__(self):
        rows = np.asarray(self.member_rows, dtype=np.int64).ravel()
        S = np.asarray(self.assignments, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != rows.size:
            raise LengthMismatch(f"{rows.size} member rows but assignment shape {S.shape}")
        if rows.size and (S.shape[1] < 1 or not np.all((S == 0) | (S == 1))
                          or not np.all(S.sum(axis=1) == 1)):
            raise MalformedRecord("side information rows must be one-hot")
        if np.unique(rows).size != rows.size:
            raise MalformedRecord("side information lists an instance twice")
        if rows.size and rows.min() < 0:
            raise MalformedRecord("negative instance index in side information")
        classes = tuple(self.classes) if self.classes else tuple(range(S.shape[1]))
        if len(classes) != S.shape[1]:
            raise LengthMismatch("one class name per side-information column")
        object.__setattr__(self, "member_rows", rows)
        object.__setattr__(self, "assignments", S)
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_labels(cls, member_rows, labels) -> "SideInfo":
        """Build from per-instance class labels; columns follow sorted label order."""
        labels = list(labels)
        classes = sorted(set(labels))
        col = {c: j for j, c in enumerate(classes)}
        S = np.zeros((len(labels), len(classes)))
        S[np.arange(len(labels)), [col[c] for c in labels]] = 1.0
        return cls(np.asarray(member_rows, dtype=np.int64), S, tuple(classes))

    @classmethod
    def empty(cls) -> "SideInfo":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 0)))

    @property
    def n_labeled(self) -> int:
        return self.member_rows.size

    @property
    def n_classes(self) -> int:
        return self.assignments.shape[1] if self.n_labeled else 0

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.assignments, axis=1) if self.n_labeled else np.zeros(0, int)


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.K < 1:
            raise InvalidK("a partition needs at least one cluster")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise MalformedRecord(f"cluster ids must lie in [0, {self.K})")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of(cls, labels) -> "Partition":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, int(labels.max()) + 1 if labels.size else 1)

    def __len__(self):
        return self.labels.size

    def restrict(self, rows) -> "Partition":
        return Partition(self.labels[np.asarray(rows, dtype=np.int64)], self.K)

    def one_hot(self) -> np.ndarray:
        H = np.zeros((self.labels.size, self.K))
        H[np.arange(self.labels.size), self.labels] = 1.0
        return H


@dataclass(frozen=True)
class AugmentedMatrix:
    block1: np.ndarray
    block2: np.ndarray
    labeled_mask: np.ndarray

    @classmethod
    def build(cls, X, side: SideInfo) -> "AugmentedMatrix":
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        if side.n_labeled and side.member_rows.max() >= n:
            raise MalformedRecord("side information refers to a missing instance")
        Y = np.zeros((n, side.n_classes))
        mask = np.zeros(n, dtype=bool)
        Y[side.member_rows] = side.assignments
        mask[side.member_rows] = True
        return cls(X, Y, mask)


@dataclass(frozen=True)
class Centroid:
    part1: np.ndarray
    part2: np.ndarray
    members: int
    labeled_members: int


@dataclass(frozen=True)
class NCM:
    counts: np.ndarray

    @classmethod
    def from_labels(cls, h, s, K=None, K_prime=None) -> "NCM":
        h = np.asarray(h, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        if h.size != s.size:
            raise LengthMismatch(f"partitions cover {h.size} and {s.size} instances")
        K = int(h.max()) + 1 if K is None else K
        K_prime = int(s.max()) + 1 if K_prime is None else K_prime
        counts = np.zeros((K, K_prime), dtype=np.int64)
        np.add.at(counts, (h, s), 1)
        return cls(counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def p(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def p_row(self) -> np.ndarray:
        return self.row_marginals / self.n

    @property
    def p_col(self) -> np.ndarray:
        return self.col_marginals / self.n


def _labels_of(x) -> np.ndarray:
    if isinstance(x, Partition):
        return x.labels
    if isinstance(x, SideInfo):
        return x.labels
    return np.asarray(x, dtype=np.int64).ravel()


def category_utility(s, h) -> float:
    """Category utility of partition ``h`` against the reference ``s``.

    Both arguments label the same labeled instances; empty clusters add nothing.
    """
    s_lab, h_lab = _labels_of(s), _labels_of(h)
    if s_lab.size != h_lab.size:
        raise LengthMismatch(f"partitions cover {s_lab.size} and {h_lab.size} instances")
    if s_lab.size == 0:
        return 0.0
    ncm = NCM.from_labels(h_lab, s_lab)
    p, pk = ncm.p, ncm.p_row
    nz = pk > 0
    within = np.sum((p[nz] ** 2).sum(axis=1) / pk[nz])
    return float(within - np.sum(ncm.p_col ** 2))


def _restricted(side: SideInfo, h) -> tuple[np.ndarray, np.ndarray]:
    h_lab = _labels_of(h)
    if h_lab.size == side.n_labeled:
        # already restricted to the labeled rows
        hs = h_lab
    elif side.n_labeled and h_lab.size > side.member_rows.max():
        hs = h_lab[side.member_rows]
    else:
        raise LengthMismatch(f"partition of {h_lab.size} cannot cover the side information")
    return side.assignments, hs


def frobenius_residual(side: SideInfo, h) -> float:
    """||S - H_S G||_F^2 with G the per-cluster means of the side-information rows."""
    S, hs = _restricted(side, h)
    if S.shape[0] == 0:
        return 0.0
    K = int(hs.max()) + 1
    H = np.zeros((hs.size, K))
    H[np.arange(hs.size), hs] = 1.0
    sizes = H.sum(axis=0)
    G = np.zeros((K, S.shape[1]))
    occupied = sizes > 0
    G[occupied] = (H.T @ S)[occupied] / sizes[occupied, None]
    R = S - H @ G
    return float(np.sum(R * R))


def utility_as_distance(side: SideInfo, h) -> float:
    """Negated Frobenius residual, per labeled instance.

    ``category_utility`` equals this value plus ``1 - sum_j p_{+j}^2``, which
    depends only on the side information.
    """
    S, _ = _restricted(side, h)
    if S.shape[0] == 0:
        return 0.0
    return -frobenius_residual(side, h) / S.shape[0]


def entropy(labels) -> float:
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(a, b) -> float:
    a, b = _labels_of(a), _labels_of(b)
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    ncm = NCM.from_labels(a_idx, b_idx)
    p, pa, pb = ncm.p, ncm.p_row, ncm.p_col
    nz = p > 0
    outer = np.outer(pa, pb)
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / outer[nz]))))


def nmi(a, b) -> float:
    """Normalized mutual information, 2 I(a;b) / (H(a) + H(b))."""
    a, b = _labels_of(a), _labels_of(b)
    if a.size != b.size:
        raise LengthMismatch(f"labelings have lengths {a.size} and {b.size}")
    if a.size == 0:
        raise EmptyDataset("nmi of empty labelings")
    ha, hb = entropy(a), entropy(b)
    if ha + hb == 0.0:
        return 1.0
    value = 2.0 * mutual_information(a, b) / (ha + hb)
    return float(min(1.0, max(0.0, value)))


@dataclass
class SSCResult:
    partition: Partition
    centroids: list
    objective_trace: list = field(default_factory=list)
    confidence: np.ndarray = None
    n_iter: int = 0
    converged: bool = False

    @property
    def labels(self) -> np.ndarray:
        return self.partition.labels


def _unit(v) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v


def initial_centroids(X, aug: AugmentedMatrix, K: int, seed: int) -> np.ndarray:
    """Labeled class means first, then greedy farthest points in cosine distance."""
    rng = np.random.default_rng(seed)
    Kp = aug.block2.shape[1]
    centers = []
    for j in range(Kp):
        members = aug.labeled_mask & (aug.block2[:, j] == 1)
        centers.append(_unit(X[members].mean(axis=0)))
    if not centers:
        centers.append(X[int(rng.integers(X.shape[0]))])
    while len(centers) < K:
        C = np.vstack(centers)
        nearest = np.max(X @ C.T, axis=1)
        # farthest point = smallest best-cosine; rng breaks exact ties
        far = np.flatnonzero(nearest == nearest.min())
        centers.append(X[int(far[rng.integers(far.size)])])
    return np.vstack(centers)


def _distances(X, Y, mask, M1, M2, lam):
    D = 1.0 - X @ M1.T
    if lam > 0 and Y.shape[1] and mask.any():
        Yl = Y[mask]
        sq = (np.sum(Yl * Yl, axis=1)[:, None] - 2.0 * Yl @ M2.T
              + np.sum(M2 * M2, axis=1)[None, :])
        D[mask] += lam * np.maximum(sq, 0.0)
    return D


def _update(X, Y, mask, labels, K, M1_prev):
    m = X.shape[1]
    Kp = Y.shape[1]
    M1 = np.zeros((K, m))
    M2 = np.zeros((K, Kp))
    members = np.bincount(labels, minlength=K)
    labeled = np.bincount(labels[mask], minlength=K) if mask.any() else np.zeros(K, int)
    np.add.at(M1, labels, X)
    if Kp and mask.any():
        np.add.at(M2, labels[mask], Y[mask])
    for k in range(K):
        if members[k]:
            M1[k] /= members[k]
        if labeled[k]:
            M2[k] /= labeled[k]
    norms = np.linalg.norm(M1, axis=1)
    dead = norms <= 1e-12
    M1[dead] = M1_prev[dead]
    norms[dead] = np.linalg.norm(M1_prev[dead], axis=1)
    return M1 / norms[:, None], M2, members, labeled


def objective(X, Y, mask, labels, M1, M2, lam) -> float:
    """Cosine distance to own centroid plus lambda-weighted label-space scatter."""
    cos_term = np.sum(1.0 - np.einsum("ij,ij->i", X, M1[labels]))
    if lam > 0 and Y.shape[1] and mask.any():
        R = Y[mask] - M2[labels[mask]]
        return float(cos_term + lam * np.sum(R * R))
    return float(cos_term)


def _repair_empty(D, labels, K):
    """Move the worst-fitting point into each empty cluster."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=K)
    n = labels.size
    own = D[np.arange(n), labels]
    for k in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        if not donors.any():
            break
        cand = np.where(donors, own, -np.inf)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = k
        counts[k] += 1
        own[i] = -np.inf
    return labels


def ssc_kmeans(data, side: Optional[SideInfo], K: int, lam: float = 1.0, seed: int = 0,
               max_iter: int = 300, tol: float = 1e-6, init: Optional[np.ndarray] = None,
               normalize: bool = True) -> SSCResult:
    """Semi-supervised K-means with a partition-level side-information constraint.

    Minimizes ``sum_i (1 - cos(x_i, m_k)) + lam * sum_{labeled i} ||s_i - g_k||^2``
    by alternating assignments and centroid updates. The feature part of a
    centroid is the (direction of the) member mean, the label part the mean
    over labeled members only.

    Args:
        data: a :class:`Dataset` or an ``n x m`` array.
        side: side information (``None`` for plain spherical K-means).
        K: number of clusters, at least the number of side-information classes.
        lam: weight of the label-space term.
        seed: controls initialization.
        init: optional explicit ``K x m`` initial feature centroids.

    Raises:
        InvalidK, EmptyDataset
    """
    X = data.matrix() if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("no instances to cluster")
    if normalize:
        X = normalize_rows(X)
    side = side if side is not None else SideInfo.empty()
    n = X.shape[0]
    if K < 1 or K > n:
        raise InvalidK(f"K={K} must lie in [1, {n}]")
    if K < side.n_classes:
        raise InvalidK(f"K={K} is smaller than the {side.n_classes} side-information classes")
    if lam < 0 or not np.isfinite(lam):
        raise InvalidK(f"lambda must be a non-negative finite number, got {lam}")
    aug = AugmentedMatrix.build(X, side)
    Y, mask = aug.block2, aug.labeled_mask

    M1 = initial_centroids(X, aug, K, seed) if init is None else normalize_rows(init)
    if M1.shape != (K, X.shape[1]):
        raise InvalidK(f"initial centroids have shape {M1.shape}, expected {(K, X.shape[1])}")
    M2 = np.zeros((K, Y.shape[1]))
    M2[: Y.shape[1]] = np.eye(Y.shape[1])[: min(K, Y.shape[1])]

    labels = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        D = _distances(X, Y, mask, M1, M2, lam)
        new = np.argmin(D, axis=1)
        new = _repair_empty(D, new, K)
        M1, M2, members, labeled = _update(X, Y, mask, new, K, M1)
        J = objective(X, Y, mask, new, M1, M2, lam)
        if trace and J > trace[-1] + MONOTONE_RTOL * max(1.0, abs(trace[-1])):
            raise AssertionError(f"objective increased at iteration {it}: {trace[-1]} -> {J}")
        stable = labels is not None and np.array_equal(new, labels)
        rel = abs(trace[-1] - J) / max(abs(trace[-1]), 1e-300) if trace else np.inf
        trace.append(J)
        labels = new
        if stable or rel < tol:
            converged = True
            break
    logger.debug("ssc_kmeans: %d iterations, objective %.6g", it, trace[-1])

    members = np.bincount(labels, minlength=K)
    labeled = np.bincount(labels[mask], minlength=K) if mask.any() else np.zeros(K, int)
    centroids = [Centroid(M1[k], M2[k], int(members[k]), int(labeled[k])) for k in range(K)]
    confidence = np.einsum("ij,ij->i", X, M1[labels])
    return SSCResult(Partition(labels, K), centroids, trace, confidence, it, converged)
