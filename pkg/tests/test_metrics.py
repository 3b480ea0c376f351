"""Score pooling, per-class and per-condition quality, weighting, ranking."""

from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqeval import (
    CLEAR_DAY,
    ClassScore,
    ConditionScores,
    ConditionTag,
    MatchResult,
    ScoreReport,
    TruePositive,
    WeightConfig,
    accumulate,
    build_report,
    class_pq,
    condition_breakdown,
    condition_scores,
    leaderboard_json,
    leaderboard_markdown,
    merge_class_scores,
    rank_submissions,
    report_from_json,
    report_to_json,
    scene_scores,
    weighted_scores,
)

FOG_DAY = ConditionTag.parse("fog/day")


def single_tp_result(category: int = 13, iou: Fraction = Fraction(3, 5)) -> MatchResult:
    return MatchResult(tp=(TruePositive(category, 1, 9, iou),), fp=(), fn=())


class TestAccumulate:
    def test_single_tp(self):
        pooled = accumulate([(single_tp_result(), FOG_DAY)])
        assert pooled == {
            FOG_DAY: {13: ClassScore(13, tp_count=1, fp_count=0, fn_count=0, iou_sum=Fraction(3, 5))}
        }

    def test_merge_order_irrelevant(self):
        a = single_tp_result(iou=Fraction(2, 3))
        b = MatchResult(tp=(), fp=((13, 5),), fn=((11, 2),))
        forward = accumulate([(a, FOG_DAY), (b, FOG_DAY)])
        backward = accumulate([(b, FOG_DAY), (a, FOG_DAY)])
        assert forward == backward
        assert forward[FOG_DAY][13] == ClassScore(13, 1, 1, 0, Fraction(2, 3))
        assert forward[FOG_DAY][11] == ClassScore(11, 0, 0, 1, Fraction(0))

    def test_empty_stream(self):
        assert accumulate([]) == {}

    def test_conditions_kept_separate(self):
        pooled = accumulate([(single_tp_result(), FOG_DAY), (single_tp_result(), CLEAR_DAY)])
        assert set(pooled) == {FOG_DAY, CLEAR_DAY}

    def test_merge_rejects_category_mix(self):
        with pytest.raises(ValueError):
            ClassScore(13, 1, 0, 0, Fraction(1)).merged(ClassScore(11, 1, 0, 0, Fraction(1)))


class TestClassScores:
    def test_single_tp_values(self):
        pq, sq, rq = class_pq(ClassScore(13, 1, 0, 0, Fraction(3, 5)))
        assert (pq, sq, rq) == (Fraction(3, 5), Fraction(3, 5), Fraction(1))

    def test_fp_only_scores_zero(self):
        pq, sq, rq = class_pq(ClassScore(13, 0, 2, 0, Fraction(0)))
        assert (pq, sq, rq) == (0, 0, 0)

    def test_perfect_class(self):
        pq, sq, rq = class_pq(ClassScore(13, 7, 0, 0, Fraction(7)))
        assert (pq, sq, rq) == (1, 1, 1)

    def test_absent_class_signals_skip(self):
        with pytest.raises(ValueError, match="absent"):
            class_pq(ClassScore(13, 0, 0, 0, Fraction(0)))

    def test_iou_sum_cannot_exceed_tp(self):
        with pytest.raises(ValueError):
            ClassScore(13, 1, 0, 0, Fraction(6, 5))

    def test_decomposition_identity(self):
        score = ClassScore(13, 3, 2, 1, Fraction(9, 4))
        pq, sq, rq = class_pq(score)
        assert pq == sq * rq  # exact in rational arithmetic

    @settings(max_examples=150, deadline=None)
    @given(
        tp=st.integers(0, 50),
        fp=st.integers(0, 50),
        fn=st.integers(0, 50),
        data=st.data(),
    )
    def test_bounds_and_identity_properties(self, tp, fp, fn, data):
        if tp + fp + fn == 0:
            return
        ious = [
            Fraction(data.draw(st.integers(51, 100), label="iou_pct"), 100) for _ in range(tp)
        ]
        score = ClassScore(13, tp, fp, fn, sum(ious, Fraction(0)))
        pq, sq, rq = class_pq(score)
        assert 0 <= pq <= 1 and 0 <= sq <= 1 and 0 <= rq <= 1
        if tp == 0:
            assert sq == 0
        else:
            assert sq > Fraction(1, 2)
            assert pq == sq * rq
        # monotonicity: one extra FP strictly lowers pq when any IoU mass exists
        bumped = class_pq(ClassScore(13, tp, fp + 1, fn, score.iou_sum))[0]
        if tp > 0:
            assert bumped < pq
        else:
            assert bumped <= pq


class TestConditionScores:
    def test_mean_of_single_class(self):
        scores = condition_scores({13: ClassScore(13, 1, 0, 0, Fraction(3, 5))}, FOG_DAY, 1)
        assert scores.pq == 60
        assert scores.rq == 100

    def test_absent_class_excluded_from_mean(self):
        per_class = {
            13: ClassScore(13, 1, 2, 0, Fraction(1)),  # pq 1/2
            11: ClassScore(11, 1, 0, 0, Fraction(7, 10)),  # pq 7/10
            5: ClassScore(5, 0, 0, 0, Fraction(0)),  # absent
        }
        scores = condition_scores(per_class, FOG_DAY, 3)
        assert scores.pq == 60

    def test_all_classes_perfect(self):
        per_class = {cid: ClassScore(cid, 2, 0, 0, Fraction(2)) for cid in range(19)}
        scores = condition_scores(per_class, FOG_DAY, 4)
        assert scores.pq == 100 and scores.sq == 100 and scores.rq == 100

    def test_no_present_class_is_error(self):
        with pytest.raises(ValueError, match="present"):
            condition_scores({13: ClassScore(13, 0, 0, 0, Fraction(0))}, FOG_DAY, 1)


class TestWeightedScores:
    def make_condition(self, tag, pq, sq=None, rq=None):
        return ConditionScores(
            tag,
            Fraction(pq),
            Fraction(sq if sq is not None else pq),
            Fraction(rq if rq is not None else pq),
            (),
            1,
        )

    def test_constant_input_invariance(self):
        c = Fraction(191, 3)
        per_condition = [self.make_condition(t, c) for t in ConditionTag.all()]
        wpq, wsq, wrq = weighted_scores(per_condition, WeightConfig.default())
        assert wpq == c and wsq == c and wrq == c

    def test_two_condition_worked_example(self):
        per_condition = [
            self.make_condition(CLEAR_DAY, 60),
            self.make_condition(FOG_DAY, 40),
        ]
        wpq, _, _ = weighted_scores(per_condition, WeightConfig.default())
        # (0.5 * 60 + 1 * 40) / 1.5
        assert wpq == Fraction(140, 3)

    def test_missing_weight_is_error(self):
        w = WeightConfig({CLEAR_DAY: Fraction(1)})
        with pytest.raises(KeyError):
            weighted_scores([self.make_condition(FOG_DAY, 50)], w)

    def test_zero_weight_total_is_error(self):
        w = WeightConfig({CLEAR_DAY: Fraction(1), FOG_DAY: Fraction(0)})
        with pytest.raises(ValueError, match="zero"):
            weighted_scores([self.make_condition(FOG_DAY, 50)], w)

    def test_empty_input_is_error(self):
        with pytest.raises(ValueError):
            weighted_scores([], WeightConfig.default())

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_weighted_mean_stays_in_range(self, data):
        tags = ConditionTag.all()
        n = data.draw(st.integers(1, 8), label="n")
        values = [
            Fraction(data.draw(st.integers(0, 10000), label=f"v{i}"), 100) for i in range(n)
        ]
        lams = [Fraction(data.draw(st.integers(0, 50), label=f"w{i}")) for i in range(n)]
        if sum(lams) == 0:
            lams[0] = Fraction(1)
        weights = WeightConfig(dict(zip(tags, lams)))
        per_condition = [self.make_condition(t, v) for t, v in zip(tags, values)]
        wpq, _, _ = weighted_scores(per_condition, weights)
        assert min(values) <= wpq <= max(values)


class TestRanking:
    TABLE = [
        ("wg", 54.23, 76.62, 65.66),
        ("michele24", 47.03, 72.61, 57.62),
        ("eliet", 45.84, 73.23, 56.40),
        ("mljp", 36.15, 68.28, 45.58),
    ]

    def report_for(self, wpq, wsq, wrq) -> ScoreReport:
        return ScoreReport(
            per_condition=(),
            wpq=Fraction(wpq),
            wsq=Fraction(wsq),
            wrq=Fraction(wrq),
            pq_all=Fraction(0),
            sq_all=Fraction(0),
            rq_all=Fraction(0),
        )

    def test_published_leaderboard_order(self):
        entries = [(team, self.report_for(a, b, c)) for team, a, b, c in self.TABLE]
        random.Random(5).shuffle(entries)
        rows = rank_submissions(entries)
        assert [(r.rank, r.team) for r in rows] == [
            (1, "wg"),
            (2, "michele24"),
            (3, "eliet"),
            (4, "mljp"),
        ]
        assert [round(float(r.wpq), 2) for r in rows] == [54.23, 47.03, 45.84, 36.15]

    def test_single_entry(self):
        rows = rank_submissions([("solo", self.report_for(50, 60, 70))])
        assert rows[0].rank == 1 and rows[0].team == "solo"

    def test_wsq_breaks_wpq_tie(self):
        rows = rank_submissions(
            [("low", self.report_for(50, 70, 60)), ("high", self.report_for(50, 71, 60))]
        )
        assert [r.team for r in rows] == ["high", "low"]

    def test_team_name_breaks_full_tie(self):
        rows = rank_submissions(
            [("zeta", self.report_for(50, 70, 60)), ("alpha", self.report_for(50, 70, 60))]
        )
        assert [r.team for r in rows] == ["alpha", "zeta"]

    def test_empty_is_error(self):
        with pytest.raises(ValueError):
            rank_submissions([])

    def test_markdown_two_decimals(self):
        rows = rank_submissions([(t, self.report_for(a, b, c)) for t, a, b, c in self.TABLE])
        text = leaderboard_markdown(rows)
        assert "| 54.23" in text and "| wg" in text
        assert text.splitlines()[0].startswith("| Rank")

    def test_json_payload(self):
        rows = rank_submissions([("wg", self.report_for(54.23, 76.62, 65.66))])
        payload = json.loads(leaderboard_json(rows))
        assert payload[0] == {
            "rank": 1,
            "team": "wg",
            "wpq": 54.23,
            "wsq": 76.62,
            "wrq": 65.66,
        }


def two_condition_report() -> ScoreReport:
    stream = [
        (single_tp_result(13, Fraction(3, 5)), CLEAR_DAY),
        (
            MatchResult(
                tp=(TruePositive(13, 1, 9, Fraction(3, 5)),),
                fp=((13, 5),),
                fn=(),
            ),
            FOG_DAY,
        ),
    ]
    return build_report(accumulate(stream), {CLEAR_DAY: 1, FOG_DAY: 1})


class TestReportAndBreakdown:
    def test_end_to_end_weighted_example(self):
        report = two_condition_report()
        # clear/day pq 60, fog/day pq 0.6/1.5 = 40 -> weighted (30+40)/1.5
        assert report.wpq == Fraction(140, 3)

    def test_uniform_margins_equal_common_value(self):
        stream = [(single_tp_result(), tag) for tag in ConditionTag.all()]
        report = build_report(accumulate(stream), {tag: 1 for tag in ConditionTag.all()})
        margins = condition_breakdown(report)
        assert set(margins) == {"clear", "fog", "rain", "snow", "day", "night", "all"}
        for margin in margins.values():
            assert margin.pq == 60

    def test_degenerate_margins_collapse(self):
        report = build_report(accumulate([(single_tp_result(), FOG_DAY)]), {FOG_DAY: 1})
        margins = condition_breakdown(report)
        assert set(margins) == {"fog", "day", "all"}
        assert margins["fog"] == margins["day"] == margins["all"]

    def test_margins_pool_counts_not_scores(self):
        report = two_condition_report()
        margins = condition_breakdown(report)
        # day margin pools counts: tp 2, fp 1, iou_sum 6/5 -> pq = (6/5)/2.5
        assert margins["day"].pq == Fraction(6, 5) / Fraction(5, 2) * 100
        assert margins["day"].pq == report.pq_all

    def test_aggregate_identity_not_enforced(self):
        # weighted means break the per-class pq = sq * rq identity as soon as
        # segmentation quality varies across conditions; the published board
        # itself shows 54.23 vs 76.62 * 65.66 / 100 = 50.31
        stream = [
            (single_tp_result(13, Fraction(3, 5)), CLEAR_DAY),
            (
                MatchResult(
                    tp=(TruePositive(13, 1, 9, Fraction(4, 5)),),
                    fp=((13, 5),),
                    fn=(),
                ),
                FOG_DAY,
            ),
        ]
        report = build_report(accumulate(stream), {CLEAR_DAY: 1, FOG_DAY: 1})
        assert report.wpq == Fraction(500, 9)
        assert report.wpq != report.wsq * report.wrq / 100

    def test_report_json_round_trip_of_scores(self):
        report = two_condition_report()
        again = report_from_json(report_to_json(report))
        assert float(again.wpq) == float(report.wpq)
        assert [str(c.condition) for c in again.per_condition] == [
            str(c.condition) for c in report.per_condition
        ]
        # JSON is the float boundary: counts survive exactly, IoU sums as floats
        before = report.per_condition[0].per_class
        after = again.per_condition[0].per_class
        assert [
            (c.category_id, c.tp_count, c.fp_count, c.fn_count) for c in after
        ] == [(c.category_id, c.tp_count, c.fp_count, c.fn_count) for c in before]
        assert [float(c.iou_sum) for c in after] == [float(c.iou_sum) for c in before]

    def test_minimal_report_parsed(self):
        raw = json.dumps({"wpq": 54.23, "wsq": 76.62, "wrq": 65.66, "team": "wg"})
        report = report_from_json(raw)
        assert report.team == "wg"
        assert float(report.wpq) == 54.23

    def test_report_missing_scores_rejected(self):
        with pytest.raises(ValueError):
            report_from_json(json.dumps({"wsq": 1.0}))


class TestAssociativity:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_any_partition_any_order_same_report(self, seed):
        rng = random.Random(seed)
        stream = []
        for i in range(12):
            tag = ConditionTag.all()[rng.randrange(8)]
            iou = Fraction(rng.randrange(51, 101), 100)
            fp = tuple((13, 100 + j) for j in range(rng.randrange(0, 3)))
            fn = tuple((11, 200 + j) for j in range(rng.randrange(0, 3)))
            stream.append((MatchResult(tp=(TruePositive(13, 1, 9, iou),), fp=fp, fn=fn), tag))
        counts: dict[ConditionTag, int] = {}
        for _, tag in stream:
            counts[tag] = counts.get(tag, 0) + 1
        baseline = report_to_json(build_report(accumulate(stream), counts))

        # partition into random chunks, accumulate each, merge shuffled
        chunks = []
        rest = stream[:]
        while rest:
            k = rng.randrange(1, len(rest) + 1)
            chunks.append(rest[:k])
            rest = rest[k:]
        rng.shuffle(chunks)
        merged: dict[ConditionTag, dict[int, ClassScore]] = {}
        for chunk in chunks:
            partial = accumulate(chunk)
            for tag, per_class in partial.items():
                merged[tag] = merge_class_scores(merged.get(tag, {}), per_class)
        assert report_to_json(build_report(merged, counts)) == baseline
