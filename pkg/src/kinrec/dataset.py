"""Benchmark construction: families to pairs to folds, face pruning, templates."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Embedding, Modality, l2_normalize, stack
from .errors import (DimensionMismatch, EmptyMatrix, EmptyScores, EmptyTemplate, EmptyTrack,
                     InsufficientCandidates, InvalidFoldCount, MalformedRecord,
                     UnknownRelationshipType)

KIN_TYPES = ("BB", "SS", "SIBS", "FD", "FS", "MD", "MS", "GFGD", "GFGS", "GMGD", "GMGS")
# same-subject genuine pairs (face verification rather than kinship)
SELF = "SELF"
NONE = "NONE"
KIN = "KIN"
NONKIN = "NONKIN"

# documented curation caps for tri-subject sets, not used by any algorithm here
TRI_SUBJECT_CAPS = (5, 15, 30)


def _check_types(types: Iterable[str]) -> frozenset:
    types = frozenset(types)
    unknown = types - set(KIN_TYPES) - {SELF}
    if unknown:
        raise UnknownRelationshipType(f"unknown relationship types: {sorted(unknown)}")
    return types


@dataclass(frozen=True)
class Family:
    fid: str
    members: Mapping[str, tuple]
    relationships: Mapping[tuple, str] = field(default_factory=dict)

    def __post_init__(self):
        members = {str(m): tuple(ids) for m, ids in self.members.items()}
        rels = {}
        for (a, b), rel in dict(self.relationships).items():
            if rel not in KIN_TYPES:
                raise UnknownRelationshipType(f"family {self.fid}: unknown type {rel!r}")
            if a not in members or b not in members:
                raise MalformedRecord(f"family {self.fid}: relationship names unknown member")
            if a == b:
                raise MalformedRecord(f"family {self.fid}: member related to itself")
            rels[(a, b)] = rel
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "relationships", rels)

    def ids(self) -> list:
        return [i for m in sorted(self.members) for i in self.members[m]]

    @classmethod
    def from_record(cls, obj: dict) -> "Family":
        try:
            rels = {(a, b): t for a, b, t in obj.get("relationships", [])}
            return cls(str(obj["fid"]), obj["members"], rels)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad family record: {exc}") from None

    def to_record(self) -> dict:
        return {"fid": self.fid,
                "members": {m: list(ids) for m, ids in sorted(self.members.items())},
                "relationships": [[a, b, t] for (a, b), t in sorted(self.relationships.items())]}


def read_families(path) -> list[Family]:
    """Families file: a JSON list of family objects (a single object is accepted)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON ({exc.msg})", exc.lineno) from None
    if isinstance(data, dict):
        data = [data]
    families = [Family.from_record(obj) for obj in data]
    fids = [f.fid for f in families]
    if len(set(fids)) != len(fids):
        raise MalformedRecord("duplicate fid in families file")
    return families


def write_families(path, families: Iterable[Family]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([f.to_record() for f in families], fh, indent=1)


@dataclass(frozen=True)
class Pair:
    id_a: str
    id_b: str
    rel: str
    label: str
    fold: int = 0

    def __post_init__(self):
        if self.id_a == self.id_b:
            raise MalformedRecord(f"pair of {self.id_a!r} with itself")
        if self.label not in (KIN, NONKIN):
            raise MalformedRecord(f"label must be KIN or NONKIN, got {self.label!r}")
        if self.label == KIN and self.rel == NONE:
            raise MalformedRecord("KIN pairs need a relationship type")

    @property
    def is_kin(self) -> bool:
        return self.label == KIN


PAIR_FIELDS = ("id_a", "id_b", "rel", "label", "fold")


def write_pairs(path, pairs: Iterable[Pair]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_FIELDS)
        for p in pairs:
            w.writerow([p.id_a, p.id_b, p.rel, p.label, p.fold])


def read_pairs(path) -> list[Pair]:
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(PAIR_FIELDS) <= set(reader.fieldnames):
            raise MalformedRecord(f"pairs file needs columns {','.join(PAIR_FIELDS)}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                pairs.append(Pair(row["id_a"], row["id_b"], row["rel"], row["label"],
                                  int(row["fold"])))
            except (ValueError, MalformedRecord) as exc:
                raise MalformedRecord(str(exc), lineno) from None
    return pairs


def generate_positive_pairs(families: Sequence[Family], types: Iterable[str] = KIN_TYPES,
                            ) -> list[Pair]:
    """All positive pairs of the requested types, sorted by (id_a, id_b).

    ``SELF`` yields the C(N, 2) same-subject pairs of every member; a kinship
    type yields the N_a * N_b cross products of each related member pair.
    """
    types = _check_types(types)
    out = []
    for fam in families:
        if SELF in types:
            for mid in sorted(fam.members):
                for a, b in combinations(sorted(fam.members[mid]), 2):
                    out.append(Pair(a, b, SELF, KIN))
        for (ma, mb), rel in sorted(fam.relationships.items()):
            if rel not in types:
                continue
            for a in fam.members[ma]:
                for b in fam.members[mb]:
                    out.append(Pair(a, b, rel, KIN))
    out.sort(key=lambda p: (p.id_a, p.id_b, p.rel))
    return out


def count_positive_pairs(families: Sequence[Family], types: Iterable[str] = KIN_TYPES) -> int:
    types = _check_types(types)
    total = 0
    for fam in families:
        if SELF in types:
            total += sum(math.comb(len(ids), 2) for ids in fam.members.values())
        total += sum(len(fam.members[a]) * len(fam.members[b])
                     for (a, b), rel in fam.relationships.items() if rel in types)
    return total


def assign_folds(subject_pair_counts: Mapping[str, int], k: int) -> dict:
    """Deal subjects round-robin into ``k`` folds, most pairs first, ties by id."""
    if k < 2:
        raise InvalidFoldCount(f"need at least 2 folds, got {k}")
    order = sorted(subject_pair_counts, key=lambda s: (-subject_pair_counts[s], s))
    return {s: i % k for i, s in enumerate(order)}


def _fid_lookup(universe: Sequence[Family]) -> dict:
    return {i: fam.fid for fam in universe for i in fam.ids()}


def sample_negative_pairs(positives: Sequence[Pair], universe: Sequence[Family], seed: int,
                          subgroups: Optional[Mapping[str, str]] = None,
                          cross_subgroup: bool = False) -> list[Pair]:
    """Randomly mismatch positives until each (fold, type) group is balanced.

    Negatives re-pair the a-side and b-side faces of the group's positives so
    that the two faces come from different families. Sampling is without
    replacement. With ``subgroups`` given, negatives are drawn within a
    subgroup; ``cross_subgroup`` adds as many again drawn across subgroups.
    """
    fid_of = _fid_lookup(universe)
    rng = np.random.default_rng(seed)
    groups = defaultdict(list)
    for p in positives:
        groups[(p.fold, p.rel)].append(p)
    out = []
    for (fold, rel), group in sorted(groups.items()):
        a_side = sorted({p.id_a for p in group})
        b_side = sorted({p.id_b for p in group})
        for i in a_side + b_side:
            if i not in fid_of:
                raise MalformedRecord(f"id {i!r} does not belong to any family")
        wanted = [(lambda a, b: True if subgroups is None else subgroups[a] == subgroups[b])]
        if cross_subgroup:
            if subgroups is None:
                raise MalformedRecord("cross-subgroup negatives need subgroup tags")
            wanted.append(lambda a, b: subgroups[a] != subgroups[b])
        taken = set()
        for accept in wanted:
            chosen = _draw(a_side, b_side, fid_of, accept, len(group), rng, taken, (fold, rel))
            taken.update(chosen)
            out.extend(Pair(a, b, rel, NONKIN, fold) for a, b in chosen)
    out.sort(key=lambda p: (p.fold, p.rel, p.id_a, p.id_b))
    return out


def _draw(a_side, b_side, fid_of, accept, count, rng, taken, where):
    cands = [(a, b) for a in a_side for b in b_side
             if a != b and fid_of[a] != fid_of[b] and accept(a, b) and (a, b) not in taken]
    if len(cands) < count:
        raise InsufficientCandidates(
            f"fold {where[0]} type {where[1]}: {len(cands)} candidates for {count} negatives")
    idx = np.sort(rng.choice(len(cands), size=count, replace=False))
    return [cands[i] for i in idx]


def build_benchmark(families: Sequence[Family], k: int = 5, seed: int = 0,
                    types: Iterable[str] = KIN_TYPES, **negative_opts) -> list[Pair]:
    """Positives, family-disjoint folds, then balanced negatives."""
    positives = generate_positive_pairs(families, types)
    fid_of = _fid_lookup(families)
    counts = {f.fid: 0 for f in families}
    for p in positives:
        counts[fid_of[p.id_a]] += 1
    folds = assign_folds(counts, k)
    positives = [replace(p, fold=folds[fid_of[p.id_a]]) for p in positives]
    negatives = sample_negative_pairs(positives, families, seed, **negative_opts)
    return sorted(positives + negatives,
                  key=lambda p: (p.fold, p.rel, p.label != KIN, p.id_a, p.id_b))


def nearest_rank(values, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * N)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise EmptyScores("percentile of an empty list")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    rank = max(1, math.ceil(percentile / 100.0 * v.size))
    return float(v[rank - 1])


def prune_faces_by_median(scores, theta: float = 0.2, percentile: float = 50.0):
    """Split face indices into (kept, dropped) by each row's percentile score."""
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise EmptyMatrix("need a non-empty 2-D score matrix")
    stat = np.array([nearest_rank(row, percentile) for row in S])
    keep = stat >= theta
    return np.flatnonzero(keep), np.flatnonzero(~keep)


def mean_pool(media: Sequence[Embedding], id: Optional[str] = None,
              modality: Optional[Modality] = None) -> Embedding:
    """Average the vectors and rescale to unit length; shared tags are kept."""
    mean = stack(media).mean(axis=0)
    ref = media[0]

    def shared(attr):
        value = getattr(ref, attr)
        return value if all(getattr(m, attr) == value for m in media) else None

    return Embedding(id or f"{ref.id}:pooled", l2_normalize(mean), shared("fid"), shared("mid"),
                     shared("subgroup"), modality or shared("modality") or Modality.STILL)


def fuse_track(frames: Sequence[Embedding], id: Optional[str] = None) -> Embedding:
    if not frames:
        raise EmptyTrack("a track needs at least one frame")
    return mean_pool(frames, id or f"{frames[0].id}:track", Modality.TRACK)


def track_face_means(scores) -> np.ndarray:
    """Per-face mean over the I sampled reference comparisons (rows = faces)."""
    S = np.asarray(scores, dtype=np.float64)
    if S.size == 0:
        raise EmptyScores("empty score matrix")
    return S.mean(axis=1)


def track_match_decision(sampled_scores, theta: float = 0.25, percentile: float = 25.0) -> bool:
    """Accept a track iff the percentile of its per-face mean scores exceeds theta."""
    scores = np.asarray(sampled_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyScores("no face scores for track")
    return bool(nearest_rank(scores, percentile) > theta)


@dataclass(frozen=True)
class Template:
    subject: tuple
    media: tuple

    def __post_init__(self):
        media = tuple(self.media)
        if not media:
            raise EmptyTemplate(f"template {self.subject} has no media")
        if len({m.dim for m in media}) > 1:
            raise DimensionMismatch(f"template {self.subject} mixes dimensions")
        object.__setattr__(self, "media", media)
        object.__setattr__(self, "subject", tuple(self.subject))

    def __len__(self):
        return len(self.media)

    @property
    def name(self) -> str:
        return "/".join(str(s) for s in self.subject if s is not None)

    def matrix(self) -> np.ndarray:
        return stack(self.media)

    def pooled(self) -> Embedding:
        return mean_pool(self.media, f"{self.name}:template")


def templates_by_subject(embeddings: Iterable[Embedding]) -> list[Template]:
    groups = defaultdict(list)
    for e in embeddings:
        groups[(e.fid, e.mid)].append(e)
    return [Template(s, tuple(groups[s])) for s in sorted(groups, key=lambda s: tuple(map(str, s)))]
