"""Query-time workflows over a built index.

Five strategies share one candidate-then-rescore shape: one or both
retrieval structures propose candidates, missing score components are
filled in from the id-keyed stores, and the final order is by the blended
total. Ablation workflows rank by a single component and report that
component as the total.
"""

from __future__ import annotations

from dataclasses import dataclass

from .indexing import IndexSet
from .reduction import QUERY, EncodedText, ReductionHeads, encode_text
from .scoring import (
    ScoreBreakdown,
    score_pair,
    score_tokens_exact_match,
    sigmoid,
)
from .tokenization import tokenize

HYBRID = "HYBRID"
SPARSE_THEN_CLS = "SPARSE_THEN_CLS"
DENSE_THEN_TOKEN = "DENSE_THEN_TOKEN"
DENSE_ONLY = "DENSE_ONLY"
SPARSE_ONLY = "SPARSE_ONLY"

WORKFLOWS = (HYBRID, SPARSE_THEN_CLS, DENSE_THEN_TOKEN, DENSE_ONLY, SPARSE_ONLY)
DEFAULT_WORKFLOW = DENSE_THEN_TOKEN


def default_k_cand(k: int) -> int:
    return max(1000, 10 * k)


@dataclass
class RankedList:
    results: list[tuple[str, ScoreBreakdown]]
    candidate_count: int
    workflow: str

    def doc_ids(self) -> list[str]:
        return [doc for doc, _ in self.results]


def encode_query(index: IndexSet, query_text: str,
                 heads: ReductionHeads | None = None) -> EncodedText:
    heads = heads if heads is not None else index.heads
    t = tokenize(query_text, index.vocab, stemming=index.manifest.stemming)
    e = index.query_encoder().encode(t)
    return encode_text(t, e, heads, QUERY)


def _rescore(index: IndexSet, q: EncodedText, heads: ReductionHeads,
             ordinals, em: bool, k: int, workflow: str,
             candidate_count: int) -> RankedList:
    scored = []
    for ordinal in ordinals:
        p = index.encoded_passage(ordinal)
        scored.append((ordinal, score_pair(q, p, heads, em=em)))
    scored.sort(key=lambda item: (-item[1].total, item[0]))
    results = [(index.doc_ids[o], b) for o, b in scored[:k]]
    return RankedList(results=results, candidate_count=candidate_count,
                      workflow=workflow)


def merge_hybrid(q: EncodedText, dense_candidates, sparse_candidates,
                 index: IndexSet, heads: ReductionHeads, k: int,
                 em: bool) -> RankedList:
    """Union both candidate lists; every member gets both score components."""
    ordinals = {index.ordinal_of(doc) for doc, _ in dense_candidates}
    ordinals.update(index.ordinal_of(doc) for doc, _ in sparse_candidates)
    ordered = sorted(ordinals)
    return _rescore(index, q, heads, ordered, em, k, HYBRID,
                    candidate_count=len(ordered))


def search(index: IndexSet, query_text: str, workflow: str = DEFAULT_WORKFLOW,
           k: int = 10, k_cand: int | None = None,
           heads: ReductionHeads | None = None) -> RankedList:
    if workflow not in WORKFLOWS:
        raise ValueError(f"unknown workflow {workflow!r}")
    heads = heads if heads is not None else index.heads
    index.validate_heads(heads)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k_cand is None:
        k_cand = default_k_cand(k)
    if k > k_cand:
        raise ValueError(f"k ({k}) must not exceed k_cand ({k_cand})")
    if workflow in (SPARSE_THEN_CLS, SPARSE_ONLY) and not index.em_enabled:
        raise ValueError("sparse retrieval requires exact-match build")
    q = encode_query(index, query_text, heads)
    em = index.em_enabled

    if workflow == DENSE_ONLY:
        ranked = index.dense_topk(q.cls, k)
        weight = sigmoid(heads.mix_logit)
        results = [
            (doc, ScoreBreakdown(cls_score=s, token_score=0.0,
                                 cls_weight=weight, total=s, attributions=[]))
            for doc, s in ranked
        ]
        return RankedList(results=results, candidate_count=index.doc_count,
                          workflow=workflow)

    if workflow == SPARSE_ONLY:
        candidates = index.sparse_topk(q, k_cand)
        weight = sigmoid(heads.mix_logit)
        scored = []
        for doc, _ in candidates:
            ordinal = index.ordinal_of(doc)
            token_score, attributions = score_tokens_exact_match(
                q, index.encoded_passage(ordinal))
            scored.append((ordinal, ScoreBreakdown(
                cls_score=0.0, token_score=token_score, cls_weight=weight,
                total=token_score, attributions=attributions)))
        scored.sort(key=lambda item: (-item[1].total, item[0]))
        results = [(index.doc_ids[o], b) for o, b in scored[:k]]
        return RankedList(results=results, candidate_count=len(candidates),
                          workflow=workflow)

    if workflow == DENSE_THEN_TOKEN:
        candidates = index.dense_topk(q.cls, k_cand)
        ordinals = [index.ordinal_of(doc) for doc, _ in candidates]
        return _rescore(index, q, heads, ordinals, em, k, workflow,
                        candidate_count=len(candidates))

    if workflow == SPARSE_THEN_CLS:
        candidates = index.sparse_topk(q, k_cand)
        ordinals = [index.ordinal_of(doc) for doc, _ in candidates]
        return _rescore(index, q, heads, ordinals, em, k, workflow,
                        candidate_count=len(candidates))

    # HYBRID: union of both structures' candidates, then full scoring.
    dense_candidates = index.dense_topk(q.cls, k_cand)
    if index.em_enabled:
        sparse_candidates = index.sparse_topk(q, k_cand)
    else:
        sparse_candidates = []
    return merge_hybrid(q, dense_candidates, sparse_candidates, index, heads,
                        k, em)
