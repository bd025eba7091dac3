"""Vector primitives and the embedding data model."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, MalformedRecord, NonFinite, ZeroVector

ZERO_TOL = 1e-12


class Modality(str, enum.Enum):
    STILL = "still"
    TRACK = "track"
    AUDIO = "audio"


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("vector has non-finite entries")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean length.

    Raises:
        ZeroVector: if the norm is at or below 1e-12.
    """
    arr = as_vector(v)
    norm = np.linalg.norm(arr)
    if norm <= ZERO_TOL:
        raise ZeroVector("cannot normalize a zero-length vector")
    return arr / norm


def normalize_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms <= ZERO_TOL):
        raise ZeroVector(f"row {int(np.argmin(norms))} has zero length")
    return X / norms[:, None]


def cosine_similarity(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.size} != {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= ZERO_TOL or nb <= ZERO_TOL:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    # normalizing before the dot keeps the result symmetric in (a, b)
    c = float(np.dot(a / na, b / nb))
    return min(1.0, max(-1.0, c))


@dataclass(frozen=True)
class Embedding:
    id: str
    vec: np.ndarray
    fid: Optional[str] = None
    mid: Optional[str] = None
    subgroup: Optional[str] = None
    modality: Modality = Modality.STILL

    def __post_init__(self):
        vec = as_vector(self.vec)
        vec.setflags(write=False)
        object.__setattr__(self, "vec", vec)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def dim(self) -> int:
        return self.vec.size

    @property
    def subject(self) -> tuple:
        return (self.fid, self.mid)

    def normalized(self) -> "Embedding":
        return Embedding(self.id, l2_normalize(self.vec), self.fid, self.mid,
                         self.subgroup, self.modality)

    def to_record(self) -> dict:
        return {"id": self.id, "fid": self.fid, "mid": self.mid,
                "subgroup": self.subgroup, "modality": self.modality.value,
                "vec": [float(x) for x in self.vec]}


@dataclass(frozen=True)
class Dataset:
    embeddings: tuple
    dim: int = field(init=False)
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        embs = tuple(self.embeddings)
        object.__setattr__(self, "embeddings", embs)
        dims = {e.dim for e in embs}
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed dimensions in dataset: {sorted(dims)}")
        index = {}
        for pos, e in enumerate(embs):
            if e.id in index:
                raise MalformedRecord(f"duplicate id {e.id!r}")
            index[e.id] = pos
        object.__setattr__(self, "dim", dims.pop() if dims else 0)
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.embeddings)

    def __iter__(self):
        return iter(self.embeddings)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.embeddings[self.index[key]]
        return self.embeddings[key]

    def __contains__(self, key):
        return key in self.index

    @property
    def ids(self) -> list:
        return [e.id for e in self.embeddings]

    def matrix(self, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        embs = self.embeddings if ids is None else [self[i] for i in ids]
        if not embs:
            return np.zeros((0, self.dim))
        return np.vstack([e.vec for e in embs])

    def normalized(self) -> "Dataset":
        return Dataset(tuple(e.normalized() for e in self.embeddings))


def stack(embeddings: Iterable[Embedding]) -> np.ndarray:
    embs = list(embeddings)
    dims = {e.dim for e in embs}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed dimensions: {sorted(dims)}")
    return np.vstack([e.vec for e in embs])


_REQUIRED = ("id", "vec")


def parse_embedding(obj, line=None) -> Embedding:
    if not isinstance(obj, dict):
        raise MalformedRecord("expected a JSON object", line)
    for key in _REQUIRED:
        if key not in obj:
            raise MalformedRecord(f"missing field {key!r}", line)
    if not isinstance(obj["id"], str):
        raise MalformedRecord("id must be a string", line)
    for key in ("fid", "mid", "subgroup"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise MalformedRecord(f"{key} must be a string or null", line)
    vec = obj["vec"]
    if not isinstance(vec, list) or not vec or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec):
        raise MalformedRecord("vec must be a non-empty list of numbers", line)
    try:
        modality = Modality(obj.get("modality", "still"))
    except ValueError:
        raise MalformedRecord(f"unknown modality {obj.get('modality')!r}", line) from None
    try:
        return Embedding(obj["id"], np.asarray(vec, dtype=np.float64), obj.get("fid"),
                         obj.get("mid"), obj.get("subgroup"), modality)
    except NonFinite:
        raise MalformedRecord("vec has non-finite entries", line) from None


def read_embeddings(path) -> Dataset:
    """Load a JSON Lines embedding file (blank lines are skipped)."""
    embs = []
    seen = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno) from None
            emb = parse_embedding(obj, lineno)
            if dim is None:
                dim = emb.dim
            elif emb.dim != dim:
                raise MalformedRecord(f"dimension {emb.dim} differs from {dim}", lineno)
            if emb.id in seen:
                raise MalformedRecord(f"duplicate id {emb.id!r} (first on line {seen[emb.id]})",
                                      lineno)
            seen[emb.id] = lineno
            embs.append(emb)
    return Dataset(tuple(embs))


def write_embeddings(path, embeddings: Iterable[Embedding]) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for e in embeddings:
            fh.write(json.dumps(e.to_record()) + "\n")
