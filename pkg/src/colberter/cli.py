"""Command-line entry points for every engine workflow."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

from .encoding import DEFAULT_D_ENC, DEFAULT_WINDOW, ReferenceEncoder
from .evaluation import (
    Run,
    StudyEffect,
    compute_metrics,
    condense_judged_only,
    dl_random_effects,
    parse_qrels,
    parse_run,
    smd_effect,
    write_run,
)
from .indexing import IndexSet, build_indices
from .reduction import ReductionHeads
from .retrieval import DEFAULT_WORKFLOW, search
from .tokenization import Vocabulary, corpus_stats
from .training import (
    FREEZE_GROUPS,
    LossWeights,
    load_triples,
    prepare_triples,
    train,
)

log = logging.getLogger(__name__)

DEFAULT_D_CLS = 32
DEFAULT_D_T = 16


def read_corpus(path) -> list[tuple[str, str]]:
    """Read JSON-lines {"id","text"} documents, preserving file order."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append((str(obj["id"]), str(obj["text"])))
            except (ValueError, KeyError) as exc:
                raise ValueError(
                    f"bad corpus line {number}: {exc}") from exc
    return docs


def read_queries_tsv(path) -> list[tuple[str, str]]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"bad query line {number}: expected "
                                 "qid<TAB>text")
            qid, text = line.split("\t", 1)
            queries.append((qid, text))
    return queries


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def cmd_stats(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    texts = [text for _, text in read_corpus(args.corpus)]
    stats = corpus_stats(texts, vocab, stemming=not args.no_stem)
    _emit(stats.as_dict())
    return 0


def cmd_build_index(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    heads = ReductionHeads.load(args.heads)
    if args.uni and heads.uni_proj is None:
        raise SystemExit("--uni given but the heads file has no uni layer")
    corpus = read_corpus(args.corpus)
    encoder = ReferenceEncoder(seed=args.seed, d_enc=heads.encoder_dim,
                               window=args.window)
    index = build_indices(corpus, vocab, encoder, heads,
                          em_enabled=args.em, threshold=args.threshold)
    index.save(args.out)
    _emit({"out": str(args.out), **index.storage_stats()})
    return 0


def _search_one(index, query, args):
    return search(index, query, workflow=args.workflow, k=args.k,
                  k_cand=args.k_cand)


def cmd_search(args) -> int:
    index = IndexSet.load(args.index)
    if args.queries:
        by_query = {}
        for qid, text in read_queries_tsv(args.queries):
            ranked = _search_one(index, text, args)
            by_query[qid] = [(doc_id, breakdown.total)
                             for doc_id, breakdown in ranked.results]
        run = Run(by_query=by_query, tag=args.tag)
        if args.out:
            write_run(run, args.out)
        else:
            for qid, ranking in run.by_query.items():
                for rank, (doc_id, score) in enumerate(ranking, start=1):
                    print(f"{qid} Q0 {doc_id} {rank} {score!r} {run.tag}")
        return 0

    start = time.perf_counter()
    ranked = _search_one(index, args.query, args)
    timing_ms = (time.perf_counter() - start) * 1000.0
    if args.json:
        from .service import build_search_payload
        _emit(build_search_payload(index, args.query, ranked, timing_ms))
    else:
        for rank, (doc_id, breakdown) in enumerate(ranked.results, start=1):
            print(f"{rank:4d}  {breakdown.total:12.6f}  {doc_id}")
    return 0


def cmd_train(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    encoder = ReferenceEncoder(seed=args.encoder_seed, d_enc=args.d_enc,
                               window=args.window)
    heads = ReductionHeads.initialize(args.d_enc, args.d_cls, args.d_t,
                                      seed=args.seed, uni=args.uni)
    weights = LossWeights.parse(args.alphas)
    history = []
    if args.steps > 0:
        triples = load_triples(args.triples)
        prepared = prepare_triples(triples, vocab, encoder)
        heads, history = train(prepared, heads, weights, lr=args.lr,
                               steps=args.steps, em=args.em,
                               freeze=tuple(args.freeze))
    heads.save(args.out_heads)
    _emit({
        "out_heads": str(args.out_heads),
        "steps": args.steps,
        "final_loss": history[-1] if history else None,
    })
    return 0


def cmd_eval(args) -> int:
    qrels = parse_qrels(args.qrels, binarization=args.binarization)
    run = parse_run(args.run)
    if args.condensed:
        run = condense_judged_only(run, qrels)
    report = compute_metrics(run, qrels)
    _emit({"condensed": bool(args.condensed),
           "binarization": args.binarization, **report.as_dict()})
    return 0


def cmd_meta(args) -> int:
    with open(args.studies, encoding="utf-8") as fh:
        listing = json.load(fh)
    effects = []
    for entry in listing["studies"]:
        if "treatment" in entry:
            effects.append(smd_effect(entry["treatment"], entry["control"],
                                      entry["name"]))
        else:
            effects.append(_study_from_effect(entry))
    _emit(dl_random_effects(effects).forest_json())
    return 0


def _study_from_effect(entry):
    effect = float(entry["d"])
    variance = float(entry["v"])
    half = 1.96 * math.sqrt(variance)
    return StudyEffect(name=entry["name"], effect=effect, variance=variance,
                       ci_low=effect - half, ci_high=effect + half)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    index = IndexSet.load(args.index)
    app = create_app(index)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colberter",
        description="Late-interaction retrieval over whole-word vectors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="corpus token statistics as JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--no-stem", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-index", help="encode a corpus and save indices")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--heads", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--em", action="store_true",
                   help="store word hashes for exact matching + postings")
    p.add_argument("--uni", action="store_true",
                   help="require the heads to carry the uni projection")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0, help="encoder seed")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", help="query a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--query")
    p.add_argument("--queries", help="TSV qid<TAB>text for batch mode")
    p.add_argument("--workflow", default=DEFAULT_WORKFLOW)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--k-cand", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="run file path for batch mode")
    p.add_argument("--tag", default="colberter")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train reduction heads on triples")
    p.add_argument("--triples", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-heads", required=True)
    p.add_argument("--alphas", default="1,0.1,0.75",
                   help="loss weights total,cls,gate")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze", action="append", default=[],
                   choices=FREEZE_GROUPS)
    p.add_argument("--uni", action="store_true")
    p.add_argument("--em", action="store_true",
                   help="score with exact word matching during training")
    p.add_argument("--d-enc", type=int, default=DEFAULT_D_ENC)
    p.add_argument("--d-cls", type=int, default=DEFAULT_D_CLS)
    p.add_argument("--d-t", type=int, default=DEFAULT_D_T)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="TREC metrics for a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--condensed", action="store_true",
                   help="drop unjudged docs and renumber before scoring")
    p.add_argument("--binarization", type=int, default=2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("meta", help="random-effects meta-analysis to JSON")
    p.add_argument("--studies", required=True,
                   help='JSON {"studies": [{name, treatment, control} '
                        'or {name, d, v}]}')
    p.set_defaults(func=cmd_meta)

    p = sub.add_parser("serve", help="HTTP service over a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "search" and not args.query and not args.queries:
        raise SystemExit("search needs --query or --queries")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
