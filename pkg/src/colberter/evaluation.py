"""Retrieval effectiveness metrics and effect-size meta-analysis.

Covers TREC-style qrels/run files, graded nDCG plus binarized MRR and
recall, judged-only condensation of runs, standardized mean differences
between two systems on one collection, and the DerSimonian-Laird
random-effects combination of several collections into forest-plot data.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

# normal quantile for 95% two-sided intervals
_Z95 = 1.96

DEFAULT_BINARIZATION = 2


@dataclass
class Qrels:
    """Graded relevance judgments: query id -> doc id -> integer grade."""

    grades: dict[str, dict[str, int]]
    binarization: int = DEFAULT_BINARIZATION

    def __post_init__(self):
        for per_doc in self.grades.values():
            for grade in per_doc.values():
                if grade < 0:
                    raise ValueError("grades must be >= 0")

    def grade(self, qid: str, docid: str) -> int:
        return self.grades.get(qid, {}).get(docid, 0)

    def judged(self, qid: str, docid: str) -> bool:
        return docid in self.grades.get(qid, {})

    def relevant(self, qid: str) -> set:
        return {d for d, g in self.grades.get(qid, {}).items()
                if g >= self.binarization}


@dataclass
class Run:
    """Ranked results per query; rank is the 1-based list position."""

    by_query: dict[str, list[tuple[str, float]]]
    tag: str = "colberter"

    def __post_init__(self):
        for qid, ranking in self.by_query.items():
            docs = [doc for doc, _ in ranking]
            if len(docs) != len(set(docs)):
                raise ValueError(f"duplicate doc in query {qid!r}")


def parse_qrels(path, binarization: int = DEFAULT_BINARIZATION) -> Qrels:
    """Read "qid 0 docid grade" lines; duplicate pairs keep the last value."""
    grades: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ValueError(
                    f"malformed qrels line {number}: expected 4 fields")
            qid, _, docid, grade_text = fields
            try:
                grade = int(grade_text)
            except ValueError:
                raise ValueError(
                    f"malformed qrels line {number}: bad grade "
                    f"{grade_text!r}") from None
            if grade < 0:
                raise ValueError(
                    f"malformed qrels line {number}: negative grade")
            per_doc = grades.setdefault(qid, {})
            if docid in per_doc:
                log.warning("duplicate qrels entry (%s, %s): keeping grade %d",
                            qid, docid, grade)
            per_doc[docid] = grade
    return Qrels(grades=grades, binarization=binarization)


def parse_run(path) -> Run:
    """Read "qid Q0 docid rank score tag" lines into a Run."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    tag = None
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise ValueError(
                    f"malformed run line {number}: expected 6 fields")
            qid, _, docid, rank_text, score_text, line_tag = fields
            try:
                rank = int(rank_text)
                score = float(score_text)
            except ValueError:
                raise ValueError(
                    f"malformed run line {number}: bad rank or score") from None
            if tag is None:
                tag = line_tag
            rows.setdefault(qid, []).append((rank, docid, score))

    by_query = {}
    for qid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        ranks = [rank for rank, _, _ in entries]
        if ranks != list(range(1, len(entries) + 1)):
            raise ValueError(
                f"ranks for query {qid!r} are not contiguous from 1")
        by_query[qid] = [(docid, score) for _, docid, score in entries]
    return Run(by_query=by_query, tag=tag or "colberter")


def write_run(run: Run, path) -> None:
    """Write TREC lines; scores use repr so parsing them back is lossless."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranking in run.by_query.items():
            for rank, (docid, score) in enumerate(ranking, start=1):
                fh.write(f"{qid} Q0 {docid} {rank} {score!r} {run.tag}\n")


def _dcg(gains, k: int) -> float:
    return sum(g / math.log2(rank + 1)
               for rank, g in enumerate(gains[:k], start=1))


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float | None]]
    means: dict[str, float | None]
    skipped: list[str] = field(default_factory=list)
    no_ideal: list[str] = field(default_factory=list)
    no_relevant: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "means": self.means,
            "per_query": self.per_query,
            "skipped_queries": self.skipped,
            "excluded_no_ideal": self.no_ideal,
            "excluded_no_relevant": self.no_relevant,
        }


def compute_metrics(run: Run, qrels: Qrels, k_ndcg: int = 10,
                    k_mrr: int = 10, k_recall: int = 1000) -> MetricReport:
    """Per-query and mean nDCG, MRR, and recall at the given cutoffs.

    Unjudged documents count as grade 0. Queries without any positively
    graded judgment have no ideal ranking and stay out of the nDCG mean;
    queries without any relevant (grade >= binarization) document stay out
    of the MRR and recall means. Run queries absent from the qrels are
    skipped with a warning.
    """
    ndcg_key = f"ndcg@{k_ndcg}"
    mrr_key = f"mrr@{k_mrr}"
    recall_key = f"recall@{k_recall}"
    report = MetricReport(per_query={}, means={})

    for qid, ranking in run.by_query.items():
        if qid not in qrels.grades:
            log.warning("query %s has no judgments: skipped", qid)
            report.skipped.append(qid)
            continue
        docs = [doc for doc, _ in ranking]
        gains = [2 ** qrels.grade(qid, d) - 1 for d in docs]
        ideal = sorted((2 ** g - 1 for g in qrels.grades[qid].values()),
                       reverse=True)
        idcg = _dcg(ideal, k_ndcg)
        if idcg > 0:
            ndcg = _dcg(gains, k_ndcg) / idcg
        else:
            ndcg = None
            report.no_ideal.append(qid)

        relevant = qrels.relevant(qid)
        if relevant:
            reciprocal = 0.0
            for rank, doc in enumerate(docs[:k_mrr], start=1):
                if doc in relevant:
                    reciprocal = 1.0 / rank
                    break
            recall = len(set(docs[:k_recall]) & relevant) / len(relevant)
        else:
            reciprocal = None
            recall = None
            report.no_relevant.append(qid)

        report.per_query[qid] = {ndcg_key: ndcg, mrr_key: reciprocal,
                                 recall_key: recall}

    for key in (ndcg_key, mrr_key, recall_key):
        values = [q[key] for q in report.per_query.values()
                  if q[key] is not None]
        report.means[key] = sum(values) / len(values) if values else None
    return report


def condense_judged_only(run: Run, qrels: Qrels) -> Run:
    """Drop unjudged documents and renumber ranks; order is preserved."""
    condensed = {}
    for qid, ranking in run.by_query.items():
        condensed[qid] = [(doc, score) for doc, score in ranking
                          if qrels.judged(qid, doc)]
    return Run(by_query=condensed, tag=run.tag)


@dataclass(frozen=True)
class StudyEffect:
    """Standardized mean difference of one collection (treatment - control)."""

    name: str
    effect: float
    variance: float
    ci_low: float
    ci_high: float
    n_treatment: int | None = None
    n_control: int | None = None
    treatment: tuple = ()
    control: tuple = ()

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("effect variance must be positive")

    @property
    def significant(self) -> bool:
        """True when the 95% interval excludes zero."""
        return self.ci_low > 0 or self.ci_high < 0


def smd_effect(treatment, control, name: str) -> StudyEffect:
    """Hedges-corrected standardized mean difference of two value lists."""
    treatment = tuple(float(v) for v in treatment)
    control = tuple(float(v) for v in control)
    n_t, n_c = len(treatment), len(control)
    if n_t < 2 or n_c < 2:
        raise ValueError("need at least two values per side")
    pooled_var = ((n_t - 1) * statistics.variance(treatment)
                  + (n_c - 1) * statistics.variance(control)) / (n_t + n_c - 2)
    if pooled_var == 0:
        raise ValueError("degenerate study: pooled standard deviation is zero")
    correction = 1 - 3 / (4 * (n_t + n_c - 2) - 1)
    effect = correction * (statistics.fmean(treatment)
                           - statistics.fmean(control)) / math.sqrt(pooled_var)
    variance = ((n_t + n_c) / (n_t * n_c)
                + effect * effect / (2 * (n_t + n_c)))
    half = _Z95 * math.sqrt(variance)
    return StudyEffect(name=name, effect=effect, variance=variance,
                       ci_low=effect - half, ci_high=effect + half,
                       n_treatment=n_t, n_control=n_c,
                       treatment=treatment, control=control)


@dataclass(frozen=True)
class MetaResult:
    tau2: float
    weights: tuple[float, ...]
    summary: float
    summary_ci: tuple[float, float]
    studies: tuple[StudyEffect, ...]

    def forest_json(self) -> dict:
        rows = []
        for study, weight in zip(self.studies, self.weights):
            rows.append({
                "name": study.name,
                "d": study.effect,
                "ci": _Z95 * math.sqrt(study.variance),
                "lo": study.ci_low,
                "hi": study.ci_high,
                "weight_pct": 100.0 * weight,
            })
        return {"studies": rows, "tau2": self.tau2, "summary": self.summary,
                "summary_ci": list(self.summary_ci)}


def dl_random_effects(studies) -> MetaResult:
    """Combine study effects with the DerSimonian-Laird moment estimator.

    Fixed-effect weights 1/v give the heterogeneity statistic Q; the
    between-study variance tau2 is the truncated moment estimate, and the
    summary effect uses weights 1/(v + tau2).
    """
    studies = tuple(studies)
    if len(studies) < 2:
        raise ValueError("need at least two studies")
    effects = [s.effect for s in studies]
    variances = [s.variance for s in studies]

    fixed = [1 / v for v in variances]
    fixed_sum = sum(fixed)
    fixed_mean = sum(w * d for w, d in zip(fixed, effects)) / fixed_sum
    heterogeneity = sum(w * (d - fixed_mean) ** 2
                        for w, d in zip(fixed, effects))
    denominator = fixed_sum - sum(w * w for w in fixed) / fixed_sum
    tau2 = max(0.0, (heterogeneity - (len(studies) - 1)) / denominator)

    random = [1 / (v + tau2) for v in variances]
    random_sum = sum(random)
    summary = sum(w * d for w, d in zip(random, effects)) / random_sum
    half = _Z95 * math.sqrt(1 / random_sum)
    return MetaResult(
        tau2=tau2,
        weights=tuple(w / random_sum for w in random),
        summary=summary,
        summary_ci=(summary - half, summary + half),
        studies=studies,
    )
