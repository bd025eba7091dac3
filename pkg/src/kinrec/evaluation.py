"""Verification, threshold, subgroup, retrieval and classification metrics.

Acceptance is always strict: a pair is accepted iff ``score > theta``.
Rate curves are exact step functions evaluated at the observed scores.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import cosine_similarity
from .dataset import KIN, Template
from .errors import (DegenerateLabels, EmptySet, EmptyTemplate, LengthMismatch, MissingSubgroup,
                     MissingType, NoRelevant, UnreachableTarget, ZeroReported)


@dataclass(frozen=True)
class ScoredPairSet:
    scores: np.ndarray
    labels: np.ndarray
    rel: Optional[tuple] = None
    subgroup: Optional[tuple] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray([l == KIN if isinstance(l, str) else bool(l) for l in self.labels],
                            dtype=bool)
        if scores.size != labels.size:
            raise LengthMismatch(f"{scores.size} scores but {labels.size} labels")
        for name in ("rel", "subgroup"):
            tags = getattr(self, name)
            if tags is not None:
                tags = tuple(tags)
                if len(tags) != scores.size:
                    raise LengthMismatch(f"{name} has {len(tags)} entries for {scores.size} pairs")
                object.__setattr__(self, name, tags)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.scores.size

    @property
    def genuine(self) -> np.ndarray:
        return self.scores[self.labels]

    @property
    def imposter(self) -> np.ndarray:
        return self.scores[~self.labels]

    def subset(self, mask) -> "ScoredPairSet":
        mask = np.asarray(mask, dtype=bool)
        pick = lambda t: None if t is None else tuple(x for x, m in zip(t, mask) if m)
        return ScoredPairSet(self.scores[mask], self.labels[mask], pick(self.rel),
                             pick(self.subgroup))

    def groups(self, by: str) -> dict:
        tags = getattr(self, by)
        if tags is None:
            raise (MissingType if by == "rel" else MissingSubgroup)(f"pairs carry no {by} tags")
        if any(t is None or t == "" for t in tags):
            raise (MissingType if by == "rel" else MissingSubgroup)(f"some pairs lack a {by} tag")
        arr = np.asarray(tags, dtype=object)
        return {g: self.subset(arr == g) for g in sorted(set(tags))}


def _counts(genuine_sorted, imposter_sorted, thetas):
    """(tp, fp) for every threshold, counting scores strictly above it."""
    thetas = np.asarray(thetas, dtype=np.float64)
    tp = genuine_sorted.size - np.searchsorted(genuine_sorted, thetas, side="right")
    fp = imposter_sorted.size - np.searchsorted(imposter_sorted, thetas, side="right")
    return tp, fp


def _ratio(num, den):
    return num / den if den else float("nan")


def rates_at_threshold(pairs: ScoredPairSet, theta: float) -> dict:
    if len(pairs) == 0:
        raise EmptySet("no pairs to score")
    accept = pairs.scores > theta
    y = pairs.labels
    tp = int(np.sum(accept & y))
    fp = int(np.sum(accept & ~y))
    fn = int(np.sum(~accept & y))
    tn = int(np.sum(~accept & ~y))
    # tar is derived from fnr so that tar == 1 - fnr holds bit for bit
    fnr = _ratio(fn, fn + tp)
    return {"theta": float(theta), "tp": tp, "fp": fp, "tn": tn, "fn": fn,
            "far": _ratio(fp, fp + tn), "fnr": fnr, "tar": 1.0 - fnr,
            "accuracy": (tp + tn) / len(pairs)}


def _require_both(pairs: ScoredPairSet):
    if len(pairs) == 0:
        raise EmptySet("no pairs to score")
    if pairs.labels.all() or not pairs.labels.any():
        raise DegenerateLabels("need both genuine and imposter pairs")


def accuracy_curve(pairs: ScoredPairSet, thetas) -> np.ndarray:
    g = np.sort(pairs.genuine)
    i = np.sort(pairs.imposter)
    tp, fp = _counts(g, i, thetas)
    tn = i.size - fp
    return (tp + tn) / len(pairs)


def optimal_threshold(pairs: ScoredPairSet) -> tuple[float, float]:
    """Smallest observed score that maximizes accuracy on ``pairs``."""
    _require_both(pairs)
    cands = np.unique(pairs.scores)
    acc = accuracy_curve(pairs, cands)
    best = int(np.argmax(acc))
    return float(cands[best]), float(acc[best])


def verification_accuracy_by_type(pairs: ScoredPairSet, theta) -> dict:
    """Per-type accuracy and the pair-count weighted average.

    ``theta`` is one threshold for all types or a mapping type -> threshold.
    """
    per_type = {}
    total = 0
    correct = 0.0
    for rel, sub in pairs.groups("rel").items():
        if isinstance(theta, Mapping):
            if rel not in theta:
                raise MissingType(f"no threshold for type {rel!r}")
            t = theta[rel]
        else:
            t = theta
        r = rates_at_threshold(sub, t)
        per_type[rel] = {"theta": float(t), "accuracy": r["accuracy"], "n": len(sub)}
        total += len(sub)
        correct += r["accuracy"] * len(sub)
    return {"per_type": per_type, "average": correct / total}


def threshold_for_far(imposter_scores, target_far: float) -> float:
    """Smallest imposter score whose false-accept rate is at most ``target_far``."""
    imp = np.sort(np.asarray(imposter_scores, dtype=np.float64).ravel())
    if imp.size == 0:
        raise EmptySet("no imposter scores")
    if not 0.0 < target_far < 1.0:
        raise ValueError(f"target FAR must lie in (0, 1), got {target_far}")
    cands = np.unique(imp)
    far = (imp.size - np.searchsorted(imp, cands, side="right")) / imp.size
    ok = np.flatnonzero(far <= target_far)
    if ok.size == 0:
        raise UnreachableTarget(f"no threshold reaches FAR {target_far}")
    return float(cands[ok[0]])


def tar_at_far(pairs: ScoredPairSet, targets: Sequence[float]) -> list[tuple]:
    _require_both(pairs)
    out = []
    for target in targets:
        theta = threshold_for_far(pairs.imposter, target)
        out.append((float(target), theta, rates_at_threshold(pairs, theta)["tar"]))
    return out


@dataclass(frozen=True)
class RatePoint:
    threshold: float
    far: float
    fnr: float
    tar: float
    accuracy: float


@dataclass(frozen=True)
class RateCurve:
    points: tuple

    def __len__(self):
        return len(self.points)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    def check(self) -> None:
        far, tar, fnr = self.column("far"), self.column("tar"), self.column("fnr")
        th = self.column("threshold")
        assert np.all(np.diff(th) > 0), "thresholds must increase"
        assert np.all(np.diff(far) <= 0), "FAR must not increase with the threshold"
        assert np.all(np.diff(tar) <= 0), "TAR must not increase with the threshold"
        assert np.all(tar == 1.0 - fnr), "TAR must equal 1 - FNR"


def det_curve(pairs: ScoredPairSet) -> RateCurve:
    """Exact rate curve at every distinct operating point.

    Thresholds are -inf (accept all), each observed score below the maximum,
    and +inf (accept none, which is also what the maximum score gives).
    """
    _require_both(pairs)
    u = np.unique(pairs.scores)
    thetas = np.concatenate([[-np.inf], u[:-1], [np.inf]])
    g = np.sort(pairs.genuine)
    i = np.sort(pairs.imposter)
    tp, fp = _counts(g, i, thetas)
    points = []
    for t, a, b in zip(thetas, tp, fp):
        fnr = (g.size - a) / g.size
        points.append(RatePoint(float(t), b / i.size, fnr, 1.0 - fnr,
                                (a + i.size - b) / len(pairs)))
    curve = RateCurve(tuple(points))
    curve.check()
    return curve


def percent_error_far(reported: float, actual: float) -> float:
    """Signed percent difference of the actual from the reported (intended) FAR."""
    if reported <= 0:
        raise ZeroReported("reported FAR must be positive")
    return (reported - actual) / reported * 100.0


def subgroup_threshold_report(pairs: ScoredPairSet, target_far: float) -> dict:
    """Global versus per-subgroup thresholds at a target FAR.

    For every subgroup the report carries the FAR/TAR achieved under the
    threshold fitted to the pooled imposters and under the subgroup's own
    threshold, their percent errors, and accuracies at the pooled and
    subgroup-optimal accuracy thresholds.
    """
    groups = pairs.groups("subgroup")
    for name, sub in groups.items():
        if sub.labels.all() or not sub.labels.any():
            raise DegenerateLabels(f"subgroup {name!r} lacks genuine or imposter pairs")
    theta_g = threshold_for_far(pairs.imposter, target_far)
    t_g, _ = optimal_threshold(pairs)
    report = {"target_far": target_far, "theta_global": theta_g, "t_global": t_g,
              "subgroups": {}}
    for name, sub in groups.items():
        at_global = rates_at_threshold(sub, theta_g)
        theta_s = threshold_for_far(sub.imposter, target_far)
        at_own = rates_at_threshold(sub, theta_s)
        t_o, acc_o = optimal_threshold(sub)
        report["subgroups"][name] = {
            "theta_global_far": theta_g,
            "far_global": at_global["far"],
            "tar_global": at_global["tar"],
            "pct_error_global": percent_error_far(target_far, at_global["far"]),
            "theta_subgroup": theta_s,
            "far_subgroup": at_own["far"],
            "tar_subgroup": at_own["tar"],
            "pct_error_subgroup": percent_error_far(target_far, at_own["far"]),
            "acc_at_t_global": rates_at_threshold(sub, t_g)["accuracy"],
            "t_optimal": t_o,
            "acc_at_t_optimal": acc_o,
            "n_genuine": int(sub.labels.sum()),
            "n_imposter": int((~sub.labels).sum()),
        }
    return report


@dataclass(frozen=True)
class RankedList:
    probe: str
    order: tuple
    relevant: frozenset
    scores: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        object.__setattr__(self, "scores", tuple(self.scores))
        if len(set(self.order)) != len(self.order):
            raise LengthMismatch("ranked gallery lists a subject twice")
        if not self.relevant <= set(self.order):
            raise LengthMismatch("relevant subjects must belong to the gallery")

    def hit_ranks(self) -> np.ndarray:
        """1-based positions of the relevant subjects."""
        return np.array([r for r, s in enumerate(self.order, start=1) if s in self.relevant])


def rank_gallery_scores(probe: str, scores: Mapping, relevant) -> RankedList:
    """Sort gallery subjects by descending score, ties by ascending subject id."""
    order = sorted(scores, key=lambda s: (-scores[s], s))
    return RankedList(probe, order, frozenset(relevant), tuple(float(scores[s]) for s in order))


def average_precision(ranked: RankedList) -> float:
    hits = ranked.hit_ranks()
    if hits.size == 0:
        raise NoRelevant(f"probe {ranked.probe!r} has no relevant gallery subject")
    return float(np.mean(np.arange(1, hits.size + 1) / hits))


def mean_average_precision(lists: Sequence[RankedList]) -> float:
    if not lists:
        raise EmptySet("no ranked lists")
    return float(np.mean([average_precision(r) for r in lists]))


def cmc(lists: Sequence[RankedList], ranks: Optional[Sequence[int]] = None):
    """Cumulative match curve and the rank@k values for the requested ranks.

    Returns ``(curve, at)`` where ``curve[k-1]`` is the fraction of probes
    whose first relevant subject sits at rank <= k.
    """
    if not lists:
        raise EmptySet("no ranked lists")
    depth = max(len(r.order) for r in lists)
    first = []
    for r in lists:
        hits = r.hit_ranks()
        if hits.size == 0:
            raise NoRelevant(f"probe {r.probe!r} has no relevant gallery subject")
        first.append(hits[0])
    first = np.asarray(first)
    counts = np.bincount(first, minlength=depth + 1)[1:]
    curve = np.cumsum(counts) / len(lists)
    ranks = ranks if ranks is not None else [1, 5, 10, 20]
    at = {int(k): float(curve[min(k, depth) - 1]) for k in ranks}
    return curve, at


def tri_subject_score(f: Template, m: Template, c: Template) -> float:
    """Mean of the father-child and mother-child cosines of pooled templates."""
    for t in (f, m, c):
        if t is None or len(t) == 0:
            raise EmptyTemplate("tri-subject scoring needs three non-empty templates")
    fv, mv, cv = f.pooled().vec, m.pooled().vec, c.pooled().vec
    return 0.5 * (cosine_similarity(fv, cv) + cosine_similarity(mv, cv))


def confusion_matrix(predicted, truth, classes: Sequence) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(truth)} labels")
    pos = {c: i for i, c in enumerate(classes)}
    M = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predicted, truth):
        M[pos[t], pos[p]] += 1
    return M


def precision_recall_f1(confusion) -> dict:
    M = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(M)
    pred = M.sum(axis=0)
    true = M.sum(axis=1)
    undefined = (pred == 0) | (true == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(pred > 0, tp / pred, 0.0)
        r = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return {"precision": p, "recall": r, "f1": f1, "undefined": undefined,
            "macro": {"precision": float(p.mean()), "recall": float(r.mean()),
                      "f1": float(f1.mean())}}


def write_det_csv(path, curve: RateCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "far", "fnr", "tar"])
        for p in curve.points:
            w.writerow([repr(float(v)) for v in (p.threshold, p.far, p.fnr, p.tar)])


def write_cmc_csv(path, curve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "cmc"])
        for k, v in enumerate(curve, start=1):
            w.writerow([k, repr(float(v))])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(path, blocks: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(blocks), fh, indent=2, sort_keys=True)
        fh.write("\n")
