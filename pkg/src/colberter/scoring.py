"""Relevance scoring: CLS dot product, whole-word max-then-sum late
interaction (optionally restricted to equal word hashes), and the learned
sigmoid blend of the two components, with per-word attributions kept for
interpretability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .reduction import PASSAGE, QUERY, EncodedText, ReductionHeads


class Attribution(NamedTuple):
    query_stem: str
    matched_stem: str | None
    contribution: float


@dataclass
class ScoreBreakdown:
    cls_score: float
    token_score: float
    cls_weight: float          # sigmoid of the mix logit, in (0, 1)
    total: float
    attributions: list[Attribution]

    def as_dict(self) -> dict:
        return {
            "s_total": self.total,
            "s_cls": self.cls_score,
            "s_token": self.token_score,
            "sigma_gamma": self.cls_weight,
        }


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def score_cls(q: EncodedText, p: EncodedText) -> float:
    if q.cls.shape != p.cls.shape:
        raise ValueError(
            f"cls dimensions differ: query {q.cls.shape[0]}, "
            f"passage {p.cls.shape[0]}"
        )
    return float(q.cls.astype(np.float64) @ p.cls.astype(np.float64))


def _passage_matrix(p: EncodedText) -> np.ndarray:
    return np.stack([w.vector for w in p.words]).astype(np.float64)


def score_tokens_maxsum(q: EncodedText, p: EncodedText) -> tuple[float, list[Attribution]]:
    """Per query word, the best passage-word dot product; summed.

    Equal best scores resolve to the lowest passage-word index.
    """
    if not q.words:
        return 0.0, []
    if not p.words:
        return 0.0, [Attribution(w.stem, None, 0.0) for w in q.words]
    mat = _passage_matrix(p)
    if mat.shape[1] != q.words[0].vector.shape[0]:
        raise ValueError(
            f"word dimensions differ: query {q.words[0].vector.shape[0]}, "
            f"passage {mat.shape[1]}"
        )
    total = 0.0
    attributions = []
    for w in q.words:
        dots = mat @ w.vector.astype(np.float64)
        best = int(np.argmax(dots))
        contribution = float(dots[best])
        total += contribution
        attributions.append(Attribution(w.stem, p.words[best].stem, contribution))
    return total, attributions


def score_tokens_exact_match(q: EncodedText, p: EncodedText) -> tuple[float, list[Attribution]]:
    """Max-then-sum restricted to passage words with the same hash.

    A query word with no equal-hash passage word contributes exactly 0.
    """
    by_hash: dict[int, list[int]] = {}
    for i, w in enumerate(p.words):
        by_hash.setdefault(w.hash, []).append(i)
    total = 0.0
    attributions = []
    for w in q.words:
        indices = by_hash.get(w.hash)
        if not indices:
            attributions.append(Attribution(w.stem, None, 0.0))
            continue
        qv = w.vector.astype(np.float64)
        dots = [float(p.words[i].vector.astype(np.float64) @ qv) for i in indices]
        best = int(np.argmax(dots))
        contribution = dots[best]
        total += contribution
        attributions.append(Attribution(w.stem, p.words[indices[best]].stem,
                                        contribution))
    return total, attributions


def aggregate_score(cls_score: float, token_score: float, mix_logit: float) -> tuple[float, float]:
    weight = sigmoid(mix_logit)
    return weight * cls_score + (1.0 - weight) * token_score, weight


def score_pair(q: EncodedText, p: EncodedText, heads: ReductionHeads,
               em: bool = False) -> ScoreBreakdown:
    if q.kind != QUERY:
        raise ValueError(f"first argument must be a query, got {q.kind!r}")
    if p.kind != PASSAGE:
        raise ValueError(f"second argument must be a passage, got {p.kind!r}")
    cls_score = score_cls(q, p)
    if em:
        token_score, attributions = score_tokens_exact_match(q, p)
    else:
        token_score, attributions = score_tokens_maxsum(q, p)
    total, weight = aggregate_score(cls_score, token_score, heads.mix_logit)
    return ScoreBreakdown(cls_score=cls_score, token_score=token_score,
                          cls_weight=weight, total=total,
                          attributions=attributions)
