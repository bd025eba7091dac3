"""Template-level scoring: naive score/feature fusion and template adaptation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Embedding, stack
from .dataset import Template
from .errors import EmptyNegatives, EmptyTemplate, SingletonGallery
from .evaluation import RankedList, rank_gallery_scores
from .matcher import cosine_matrix
from .svm import DEFAULT_LAMBDA, LinearModel, decision, train_cwsvm


def _nonempty(*templates):
    for t in templates:
        if t is None or len(t) == 0:
            raise EmptyTemplate("template has no media")


def score_fusion(a: Template, b: Template) -> float:
    """Mean of all media-to-media cosine scores between two templates."""
    _nonempty(a, b)
    return float(np.mean(cosine_matrix(a.matrix(), b.matrix())))


def feature_fusion(t: Template) -> Embedding:
    _nonempty(t)
    return t.pooled()


def feature_fusion_score(a: Template, b: Template) -> float:
    return float(cosine_matrix(feature_fusion(a).vec[None], feature_fusion(b).vec[None])[0, 0])


def template_evaluation(model: LinearModel, t: Template) -> float:
    """Mean classifier decision over the template's media."""
    return float(np.mean(decision(model, t.matrix())))


def symmetric_score(p_of_q: float, q_of_p: float) -> float:
    return 0.5 * p_of_q + 0.5 * q_of_p


def adapt(t: Template, negatives, lam: float = DEFAULT_LAMBDA) -> LinearModel:
    """One-vs-rest model with the template's media as the positive class."""
    neg = negatives if isinstance(negatives, np.ndarray) else stack(negatives)
    return train_cwsvm(t.matrix(), neg, lam)


def probe_adaptation_score(p: Template, q: Template, negatives: Sequence[Embedding],
                           lam: float = DEFAULT_LAMBDA) -> float:
    """Half-sum of each template's model evaluated on the other template."""
    _nonempty(p, q)
    if not negatives:
        raise EmptyNegatives("probe adaptation needs a negative set")
    own = {m.id for m in p.media} | {m.id for m in q.media}
    if any(n.id in own for n in negatives):
        raise EmptyNegatives("negatives must not contain the templates' own media")
    model_p = adapt(p, negatives, lam)
    model_q = adapt(q, negatives, lam)
    return symmetric_score(template_evaluation(model_p, q), template_evaluation(model_q, p))


@dataclass(frozen=True)
class AdaptedTemplate:
    template: Template
    model: LinearModel
    negative_ids: frozenset


def gallery_adapt(gallery: Sequence[Template], train_negatives: Iterable[Embedding] = (),
                  lam: float = DEFAULT_LAMBDA) -> dict:
    """Train one model per gallery template against the external negatives
    plus the media of every other gallery template.

    Returns a mapping template name -> :class:`AdaptedTemplate`.
    """
    if len(gallery) < 2:
        raise SingletonGallery("gallery adaptation needs at least two templates")
    names = [t.name for t in gallery]
    if len(set(names)) != len(names):
        raise SingletonGallery("gallery template names must be unique")
    external = list(train_negatives)
    adapted = {}
    for i, t in enumerate(gallery):
        negs = external + [m for j, other in enumerate(gallery) if j != i for m in other.media]
        adapted[t.name] = AdaptedTemplate(t, adapt(t, negs, lam), frozenset(n.id for n in negs))
    return adapted


def rank_gallery(probe: Template, adapted: dict, relevant: Iterable[str] = (),
                 probe_name: Optional[str] = None) -> RankedList:
    """Rank adapted gallery templates by their mean decision over the probe media."""
    _nonempty(probe)
    X = probe.matrix()
    scores = {name: float(np.mean(decision(a.model, X))) for name, a in adapted.items()}
    return rank_gallery_scores(probe_name or probe.name, scores, relevant)


def rank_by_fusion(probe: Template, gallery: Sequence[Template], mode: str = "score",
                   relevant: Iterable[str] = (), probe_name: Optional[str] = None) -> RankedList:
    """Rank gallery templates by naive score fusion or pooled-feature cosine."""
    if mode == "score":
        fn = score_fusion
    elif mode == "feature":
        fn = feature_fusion_score
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    scores = {t.name: fn(probe, t) for t in gallery}
    return rank_gallery_scores(probe_name or probe.name, scores, relevant)
