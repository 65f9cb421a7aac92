"""Read-only HTTP facade over a loaded index.

Exposes search with per-word attributions, index statistics, and raw
document lookup. The same result serializer backs the CLI's JSON output so
both surfaces stay in lockstep.
"""

from __future__ import annotations

import time

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .indexing import IndexSet
from .retrieval import DEFAULT_WORKFLOW, RankedList, search
from .scoring import ScoreBreakdown
from .tokenization import tokenize

MAX_K = 100
MAX_K_CAND = 10000


class SearchRequest(BaseModel):
    query: str
    workflow: str = DEFAULT_WORKFLOW
    k: int = Field(default=10, ge=1, le=MAX_K)
    k_cand: int | None = Field(default=None, ge=1, le=MAX_K_CAND)


def _first_surfaces(index: IndexSet, text: str) -> dict[str, str]:
    """Map each stem to the surface form of its first occurrence."""
    t = tokenize(text, index.vocab, stemming=index.manifest.stemming)
    surfaces: dict[str, str] = {}
    for (surface, _), stem in zip(t.whole_words, t.word_stems):
        surfaces.setdefault(stem, surface)
    return surfaces


def serialize_result(index: IndexSet, doc_id: str,
                     breakdown: ScoreBreakdown) -> dict:
    """One response entry: scores plus the per-word attribution list."""
    text = index.get_text(doc_id)
    encoded = index.encoded_passage(index.ordinal_of(doc_id))
    surfaces = _first_surfaces(index, text)

    contributions: dict[str, float] = {}
    for attribution in breakdown.attributions:
        if attribution.matched_stem is not None:
            contributions[attribution.matched_stem] = (
                contributions.get(attribution.matched_stem, 0.0)
                + attribution.contribution)

    words = []
    for entry in encoded.words:
        matched = entry.stem in contributions
        words.append({
            "word": surfaces.get(entry.stem, entry.stem),
            "stem": entry.stem,
            "removed": False,
            "matched": matched,
            "contribution": contributions[entry.stem] if matched else None,
        })
    for stem in encoded.removed_stems:
        words.append({
            "word": surfaces.get(stem, stem),
            "stem": stem,
            "removed": True,
            "matched": False,
            "contribution": None,
        })

    scores = breakdown.as_dict()
    return {
        "doc_id": doc_id,
        "snippet": text[:200],
        "s_total": scores["s_total"],
        "s_cls": scores["s_cls"],
        "s_token": scores["s_token"],
        "sigma_gamma": scores["sigma_gamma"],
        "words": words,
    }


def build_search_payload(index: IndexSet, query: str, ranked: RankedList,
                         timing_ms: float) -> dict:
    return {
        "query": query,
        "workflow": ranked.workflow,
        "candidate_count": ranked.candidate_count,
        "results": [serialize_result(index, doc_id, breakdown)
                    for doc_id, breakdown in ranked.results],
        "timing_ms": timing_ms,
    }


def create_app(index: IndexSet | None = None) -> FastAPI:
    app = FastAPI(title="colberter", docs_url=None, redoc_url=None)
    app.state.index = index
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def bad_body(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ()))
        return JSONResponse(
            status_code=400,
            content={"error": f"bad request body: {where}: "
                              f"{first.get('msg', 'invalid')}"})

    class _NotLoaded(Exception):
        pass

    def loaded_index() -> IndexSet:
        if app.state.index is None:
            raise _NotLoaded()
        return app.state.index

    @app.exception_handler(_NotLoaded)
    async def not_loaded(request: Request, exc: _NotLoaded):
        return JSONResponse(status_code=503,
                            content={"error": "index not loaded"})

    @app.post("/v1/search")
    async def handle_search(body: SearchRequest):
        index = loaded_index()
        start = time.perf_counter()
        try:
            ranked = search(index, body.query, workflow=body.workflow,
                            k=body.k, k_cand=body.k_cand)
        except ValueError as exc:
            return JSONResponse(status_code=400,
                                content={"error": str(exc)})
        timing_ms = (time.perf_counter() - start) * 1000.0
        return build_search_payload(index, body.query, ranked, timing_ms)

    @app.get("/v1/stats")
    async def handle_stats():
        index = loaded_index()
        return {"manifest": index.manifest.as_dict(),
                "storage": index.storage_stats()}

    @app.get("/v1/doc/{doc_id}")
    async def handle_doc(doc_id: str):
        index = loaded_index()
        try:
            text = index.get_text(doc_id)
        except KeyError:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown doc id {doc_id!r}"})
        return {"doc_id": doc_id, "text": text}

    return app
