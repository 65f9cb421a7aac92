import math

import numpy as np
import pytest

from colberter.evaluation import (
    Qrels,
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

QRELS = Qrels(grades={
    "q1": {"d1": 3, "d2": 1, "d3": 2, "d4": 0},
    "q2": {"d1": 1, "d5": 2},
    "q3": {"d9": 0, "d10": 1},
    "q4": {"d1": 0},
})
RUN = Run(by_query={
    "q1": [("d2", 0.9), ("d1", 0.8), ("d7", 0.7), ("d3", 0.6)],
    "q2": [("d5", 1.0), ("d1", 0.9)],
    "q3": [("d10", 0.5), ("d9", 0.4)],
    "q4": [("d1", 0.3)],
})

STUDY1 = ([0.8, 0.6, 0.9, 0.7, 0.75, 0.85, 0.65, 0.95],
          [0.5, 0.55, 0.6, 0.45, 0.7, 0.4, 0.65, 0.5])
STUDY2 = ([0.3, 0.5, 0.4, 0.45, 0.35, 0.55],
          [0.32, 0.45, 0.38, 0.40, 0.36, 0.50])
STUDY3 = ([0.9, 0.85, 0.95, 0.8, 0.88, 0.92, 0.87, 0.91, 0.83, 0.9],
          [0.7, 0.75, 0.65, 0.8, 0.72, 0.68, 0.74, 0.77, 0.71, 0.69])


class TestQrelsParsing:
    def test_basic_line(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d7 2\n")
        qrels = parse_qrels(path)
        assert qrels.grade("q1", "d7") == 2
        assert qrels.grade("q1", "missing") == 0

    def test_duplicate_keeps_last_with_warning(self, tmp_path, caplog):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d7 2\nq1 0 d7 3\n")
        with caplog.at_level("WARNING"):
            qrels = parse_qrels(path)
        assert qrels.grade("q1", "d7") == 3
        assert "duplicate qrels entry" in caplog.text

    @pytest.mark.parametrize("line,match", [
        ("q1 0 d7\n", "line 1"),
        ("q1 0 d7 two\n", "line 1"),
        ("q1 0 d7 -1\n", "negative"),
    ])
    def test_malformed_lines(self, tmp_path, line, match):
        path = tmp_path / "qrels.txt"
        path.write_text(line)
        with pytest.raises(ValueError, match=match):
            parse_qrels(path)

    def test_error_names_offending_line(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 1\n\nq1 0 d2 x\n")
        with pytest.raises(ValueError, match="line 3"):
            parse_qrels(path)

    def test_negative_grade_rejected_in_constructor(self):
        with pytest.raises(ValueError, match=">= 0"):
            Qrels(grades={"q": {"d": -2}})


class TestRunIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.txt"
        run = Run(by_query={"q1": [("d1", 1.25), ("d2", 0.1 + 0.2)],
                            "q2": [("dX", -3.5)]}, tag="trial")
        write_run(run, path)
        back = parse_run(path)
        assert back.by_query == run.by_query
        assert back.tag == "trial"

    def test_out_of_order_ranks_are_sorted(self, tmp_path):
        path = tmp_path / "run.txt"
        path.write_text("q1 Q0 d2 2 0.5 t\nq1 Q0 d1 1 0.9 t\n")
        run = parse_run(path)
        assert run.by_query["q1"] == [("d1", 0.9), ("d2", 0.5)]

    def test_non_contiguous_ranks_rejected(self, tmp_path):
        path = tmp_path / "run.txt"
        path.write_text("q1 Q0 d1 1 0.9 t\nq1 Q0 d2 3 0.5 t\n")
        with pytest.raises(ValueError, match="contiguous"):
            parse_run(path)

    def test_malformed_run_line(self, tmp_path):
        path = tmp_path / "run.txt"
        path.write_text("q1 Q0 d1 1 0.9\n")
        with pytest.raises(ValueError, match="line 1"):
            parse_run(path)

    def test_bad_score(self, tmp_path):
        path = tmp_path / "run.txt"
        path.write_text("q1 Q0 d1 1 high t\n")
        with pytest.raises(ValueError, match="line 1"):
            parse_run(path)

    def test_duplicate_doc_rejected(self):
        with pytest.raises(ValueError, match="duplicate doc"):
            Run(by_query={"q1": [("d1", 1.0), ("d1", 0.5)]})


class TestComputeMetrics:
    def test_perfect_single_query(self):
        qrels = Qrels(grades={"q": {"d": 2}})
        run = Run(by_query={"q": [("d", 1.0)]})
        report = compute_metrics(run, qrels)
        assert report.per_query["q"] == {
            "ndcg@10": 1.0, "mrr@10": 1.0, "recall@1000": 1.0}

    def test_relevant_at_rank_two(self):
        qrels = Qrels(grades={"q": {"d2": 2}})
        run = Run(by_query={"q": [("d1", 1.0), ("d2", 0.5)]})
        report = compute_metrics(run, qrels)
        assert report.per_query["q"]["mrr@10"] == 0.5

    def test_relevant_beyond_mrr_cutoff(self):
        qrels = Qrels(grades={"q": {"dX": 2}})
        ranking = [(f"d{i}", 1.0 - i / 100) for i in range(10)]
        ranking.append(("dX", 0.0))
        report = compute_metrics(Run(by_query={"q": ranking}), qrels)
        assert report.per_query["q"]["mrr@10"] == 0.0
        assert report.per_query["q"]["recall@1000"] == 1.0

    def test_graded_fixture_matches_frozen_oracle(self):
        report = compute_metrics(RUN, QRELS)
        per = report.per_query
        assert per["q1"]["ndcg@10"] == pytest.approx(
            0.7142221296584441, abs=1e-9)
        assert per["q1"]["mrr@10"] == 0.5
        assert per["q1"]["recall@1000"] == 1.0
        assert per["q2"] == {"ndcg@10": 1.0, "mrr@10": 1.0, "recall@1000": 1.0}
        assert per["q3"]["ndcg@10"] == 1.0
        assert per["q3"]["mrr@10"] is None
        assert report.means["ndcg@10"] == pytest.approx(
            0.9047407098861481, abs=1e-9)
        assert report.means["mrr@10"] == pytest.approx(0.75, abs=1e-9)
        assert report.means["recall@1000"] == pytest.approx(1.0, abs=1e-9)

    def test_small_recall_cutoff(self):
        report = compute_metrics(RUN, QRELS, k_recall=3)
        assert report.per_query["q1"]["recall@3"] == 0.5
        assert report.means["recall@3"] == pytest.approx(0.75, abs=1e-9)

    def test_exclusion_bookkeeping(self):
        report = compute_metrics(RUN, QRELS)
        assert report.no_ideal == ["q4"]
        assert set(report.no_relevant) == {"q3", "q4"}
        assert "q4" not in report.per_query or \
            report.per_query["q4"]["ndcg@10"] is None

    def test_unjudged_query_skipped_with_warning(self, caplog):
        run = Run(by_query={"q1": [("d1", 1.0)], "ghost": [("d1", 1.0)]})
        with caplog.at_level("WARNING"):
            report = compute_metrics(run, QRELS)
        assert report.skipped == ["ghost"]
        assert "ghost" not in report.per_query
        assert "no judgments" in caplog.text

    def test_metric_ranges_on_random_runs(self):
        rng = np.random.default_rng(7)
        docs = [f"d{i}" for i in range(20)]
        for _ in range(25):
            grades = {d: int(rng.integers(0, 4)) for d in
                      rng.choice(docs, size=8, replace=False)}
            qrels = Qrels(grades={"q": grades})
            order = list(rng.permutation(docs))
            run = Run(by_query={
                "q": [(d, float(len(docs) - i)) for i, d in enumerate(order)]})
            report = compute_metrics(run, qrels)
            ndcg = report.per_query["q"]["ndcg@10"]
            mrr = report.per_query["q"]["mrr@10"]
            if ndcg is not None:
                assert 0.0 <= ndcg <= 1.0
            if mrr is not None:
                assert mrr == 0.0 or 0.1 <= mrr <= 1.0


class TestCondensation:
    def test_all_judged_is_identity(self):
        run = Run(by_query={"q2": [("d5", 1.0), ("d1", 0.9)]})
        assert condense_judged_only(run, QRELS).by_query == run.by_query

    def test_unjudged_removed_and_renumbered(self):
        condensed = condense_judged_only(RUN, QRELS)
        assert condensed.by_query["q1"] == [
            ("d2", 0.9), ("d1", 0.8), ("d3", 0.6)]

    def test_idempotent(self):
        once = condense_judged_only(RUN, QRELS)
        twice = condense_judged_only(once, QRELS)
        assert once.by_query == twice.by_query

    def test_condensing_can_only_help_blocked_metrics(self):
        qrels = Qrels(grades={"q": {"dR": 2, "dJ": 0}})
        run = Run(by_query={"q": [("dU", 1.0), ("dR", 0.9), ("dJ", 0.8)]})
        raw = compute_metrics(run, qrels)
        condensed = compute_metrics(condense_judged_only(run, qrels), qrels)
        assert raw.per_query["q"]["mrr@10"] == 0.5
        assert condensed.per_query["q"]["mrr@10"] == 1.0
        assert condensed.per_query["q"]["ndcg@10"] >= \
            raw.per_query["q"]["ndcg@10"]


class TestSmdEffect:
    def test_identical_lists_give_zero(self):
        values = [0.2, 0.4, 0.6]
        study = smd_effect(values, values, "same")
        assert study.effect == 0.0
        assert study.ci_low == -study.ci_high

    def test_one_pooled_sd_yields_correction_factor(self):
        study = smd_effect([1.0, 2.0, 3.0], [0.0, 1.0, 2.0], "unit")
        assert study.effect == pytest.approx(0.8, abs=1e-12)

    def test_frozen_fixture_values(self):
        expected = [
            (STUDY1, 1.943434343434344, 0.36802928272625246,
             (0.7543921690262319, 3.132476517842456)),
            (STUDY2, 0.2679084439003706, 0.3363239555963799,
             (-0.8687630600175612, 1.4045799478183025)),
            (STUDY3, 3.418003616754028, 0.49206871810359043,
             (2.043110461826434, 4.792896771681622)),
        ]
        for (t, c), effect, variance, ci in expected:
            study = smd_effect(t, c, "s")
            assert study.effect == pytest.approx(effect, abs=1e-9)
            assert study.variance == pytest.approx(variance, abs=1e-9)
            assert study.ci_low == pytest.approx(ci[0], abs=1e-9)
            assert study.ci_high == pytest.approx(ci[1], abs=1e-9)

    def test_degenerate_study(self):
        with pytest.raises(ValueError, match="degenerate study"):
            smd_effect([0.5, 0.5, 0.5], [0.5, 0.5, 0.5], "flat")

    def test_too_few_values(self):
        with pytest.raises(ValueError, match="two values"):
            smd_effect([1.0], [0.0, 0.5], "tiny")

    def test_significance_flag_matches_interval(self):
        for (t, c) in (STUDY1, STUDY2, STUDY3):
            study = smd_effect(t, c, "s")
            excludes_zero = abs(study.effect) > \
                1.96 * math.sqrt(study.variance)
            assert study.significant == excludes_zero

    def test_swap_negates_exactly(self):
        for (t, c) in (STUDY1, STUDY2, STUDY3):
            forward = smd_effect(t, c, "s")
            backward = smd_effect(c, t, "s")
            assert backward.effect == -forward.effect
            assert backward.variance == forward.variance
            assert backward.ci_low == -forward.ci_high
            assert backward.ci_high == -forward.ci_low


def study_from(effect, variance, name="s"):
    half = 1.96 * math.sqrt(variance)
    return StudyEffect(name=name, effect=effect, variance=variance,
                       ci_low=effect - half, ci_high=effect + half)


class TestRandomEffects:
    def test_frozen_fixture_a(self):
        studies = [study_from(0.30, 0.02), study_from(0.10, 0.05),
                   study_from(0.55, 0.04)]
        result = dl_random_effects(studies)
        assert result.tau2 == pytest.approx(0.0053409090909091, abs=1e-9)
        for got, want in zip(result.weights,
                             (0.4958343008642708, 0.2270452753444198,
                              0.27712042379130936)):
            assert got == pytest.approx(want, abs=1e-9)
        assert result.summary == pytest.approx(0.3238710508789434, abs=1e-9)
        assert result.summary_ci[0] == pytest.approx(
            0.10416832243490551, abs=1e-9)
        assert result.summary_ci[1] == pytest.approx(
            0.5435737793229813, abs=1e-9)

    def test_frozen_smd_pipeline_fixture(self):
        studies = [smd_effect(t, c, f"s{i}")
                   for i, (t, c) in enumerate((STUDY1, STUDY2, STUDY3))]
        result = dl_random_effects(studies)
        assert result.tau2 == pytest.approx(2.0159992657759447, abs=1e-6)
        assert result.summary == pytest.approx(1.843412681007534, abs=1e-6)
        assert result.summary_ci[0] == pytest.approx(
            0.08560614089506657, abs=1e-6)
        assert result.summary_ci[1] == pytest.approx(
            3.6012192211200014, abs=1e-6)
        for got, want in zip(result.weights,
                             (0.3373793968735218, 0.34192669889714156,
                              0.3206939042293366)):
            assert got == pytest.approx(want, abs=1e-6)

    def test_identical_studies_collapse(self):
        studies = [study_from(0.4, 0.03) for _ in range(4)]
        result = dl_random_effects(studies)
        assert result.tau2 == 0.0
        assert result.summary == pytest.approx(0.4, abs=1e-12)

    def test_large_heterogeneity_equalizes_weights(self):
        result = dl_random_effects([study_from(0.0, 0.01),
                                    study_from(50.0, 1.0)])
        assert result.tau2 > 100
        w0, w1 = result.weights
        assert abs(w0 - w1) / max(w0, w1) < 0.01

    def test_weights_sum_to_one(self):
        studies = [smd_effect(t, c, "s") for t, c in (STUDY1, STUDY2, STUDY3)]
        result = dl_random_effects(studies)
        assert sum(result.weights) == pytest.approx(1.0, abs=1e-12)

    def test_too_few_studies(self):
        with pytest.raises(ValueError, match="two studies"):
            dl_random_effects([study_from(0.1, 0.5)])

    def test_swap_negates_meta_exactly(self):
        forward = dl_random_effects(
            [smd_effect(t, c, "s") for t, c in (STUDY1, STUDY2, STUDY3)])
        backward = dl_random_effects(
            [smd_effect(c, t, "s") for t, c in (STUDY1, STUDY2, STUDY3)])
        assert backward.tau2 == forward.tau2
        assert backward.summary == -forward.summary
        assert backward.summary_ci == (-forward.summary_ci[1],
                                       -forward.summary_ci[0])
        for fs, bs in zip(forward.forest_json()["studies"],
                          backward.forest_json()["studies"]):
            assert bs["d"] == -fs["d"]
            assert bs["lo"] == -fs["hi"]
            assert bs["hi"] == -fs["lo"]
            assert bs["weight_pct"] == pytest.approx(fs["weight_pct"],
                                                     abs=1e-12)

    def test_forest_json_shape(self):
        studies = [smd_effect(t, c, f"coll{i}")
                   for i, (t, c) in enumerate((STUDY1, STUDY2, STUDY3))]
        forest = dl_random_effects(studies).forest_json()
        assert set(forest) == {"studies", "tau2", "summary", "summary_ci"}
        assert [s["name"] for s in forest["studies"]] == \
            ["coll0", "coll1", "coll2"]
        for row in forest["studies"]:
            assert set(row) == {"name", "d", "ci", "lo", "hi", "weight_pct"}
            assert row["lo"] == pytest.approx(row["d"] - row["ci"], abs=1e-12)
            assert row["hi"] == pytest.approx(row["d"] + row["ci"], abs=1e-12)
        assert sum(r["weight_pct"] for r in forest["studies"]) == \
            pytest.approx(100.0, abs=1e-9)
