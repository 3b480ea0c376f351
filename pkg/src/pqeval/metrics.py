"""Quality scores: per-class, per-condition, marginal, and weather-weighted.

All score arithmetic is exact rational (``fractions.Fraction``) from integer
pixel counts; floats appear only when a report is serialized. This makes
accumulation associative and commutative, so any partition of the scene
stream merges to a bit-identical report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .conditions import ConditionTag, WeightConfig
from .matching import MatchResult

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class ClassScore:
    """Pooled TP/FP/FN counts and IoU sum for one category."""

    category_id: int
    tp_count: int = 0
    fp_count: int = 0
    fn_count: int = 0
    iou_sum: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if min(self.tp_count, self.fp_count, self.fn_count) < 0:
            raise ValueError("counts must be nonnegative")
        if self.iou_sum > self.tp_count:
            raise ValueError(f"iou_sum {self.iou_sum} exceeds tp count {self.tp_count}")

    @property
    def absent(self) -> bool:
        return self.tp_count + self.fp_count + self.fn_count == 0

    def merged(self, other: "ClassScore") -> "ClassScore":
        if other.category_id != self.category_id:
            raise ValueError("cannot merge scores of different categories")
        return ClassScore(
            category_id=self.category_id,
            tp_count=self.tp_count + other.tp_count,
            fp_count=self.fp_count + other.fp_count,
            fn_count=self.fn_count + other.fn_count,
            iou_sum=self.iou_sum + other.iou_sum,
        )


def scene_scores(match: MatchResult) -> dict[int, ClassScore]:
    """Per-category counts for a single matched image pair."""
    tallies: dict[int, list] = {}

    def bucket(category_id: int) -> list:
        return tallies.setdefault(category_id, [0, 0, 0, Fraction(0)])

    for pair in match.tp:
        t = bucket(pair.category_id)
        t[0] += 1
        t[3] += pair.iou
    for category_id, _ in match.fp:
        bucket(category_id)[1] += 1
    for category_id, _ in match.fn:
        bucket(category_id)[2] += 1
    return {
        cid: ClassScore(cid, tp_count=t[0], fp_count=t[1], fn_count=t[2], iou_sum=t[3])
        for cid, t in tallies.items()
    }


def merge_class_scores(
    a: Mapping[int, ClassScore], b: Mapping[int, ClassScore]
) -> dict[int, ClassScore]:
    """Associative, commutative merge of per-category score maps."""
    out = dict(a)
    for cid, score in b.items():
        out[cid] = out[cid].merged(score) if cid in out else score
    return out


def accumulate(
    results: Iterable[tuple[MatchResult, ConditionTag]],
) -> dict[ConditionTag, dict[int, ClassScore]]:
    """Pool match results into per-condition, per-category counts."""
    pooled: dict[ConditionTag, dict[int, ClassScore]] = {}
    for match, tag in results:
        pooled[tag] = merge_class_scores(pooled.get(tag, {}), scene_scores(match))
    return pooled


def class_pq(score: ClassScore) -> tuple[Fraction, Fraction, Fraction]:
    """(pq, sq, rq) fractions for one category.

    Raises ValueError for an absent category (tp + fp + fn == 0): absent
    classes are skipped by the per-condition mean, never scored as zero.
    """
    if score.absent:
        raise ValueError(f"category {score.category_id} is absent; skip it, do not score 0")
    denom = score.tp_count + HALF * score.fp_count + HALF * score.fn_count
    rq = Fraction(score.tp_count) / denom
    sq = score.iou_sum / score.tp_count if score.tp_count > 0 else Fraction(0)
    pq = score.iou_sum / denom
    return pq, sq, rq


@dataclass(frozen=True)
class ConditionScores:
    """Scores for one condition subset, as percentages, plus the raw counts."""

    condition: ConditionTag
    pq: Fraction
    sq: Fraction
    rq: Fraction
    per_class: tuple[ClassScore, ...]
    n_scenes: int


def _mean_scores(per_class: Mapping[int, ClassScore]) -> tuple[Fraction, Fraction, Fraction]:
    present = [s for s in per_class.values() if not s.absent]
    if not present:
        raise ValueError("no present category in subset; nothing to score")
    totals = [Fraction(0), Fraction(0), Fraction(0)]
    for score in present:
        for i, value in enumerate(class_pq(score)):
            totals[i] += value
    n = len(present)
    return totals[0] / n, totals[1] / n, totals[2] / n


def condition_scores(
    per_class: Mapping[int, ClassScore],
    condition: ConditionTag,
    n_scenes: int,
) -> ConditionScores:
    """Unweighted mean over present categories, scaled to percentages."""
    pq, sq, rq = _mean_scores(per_class)
    ordered = tuple(per_class[cid] for cid in sorted(per_class))
    return ConditionScores(condition, pq * 100, sq * 100, rq * 100, ordered, n_scenes)


def weighted_scores(
    per_condition: Sequence[ConditionScores],
    weights: WeightConfig,
) -> tuple[Fraction, Fraction, Fraction]:
    """Normalized weighted mean over the supplied condition subsets.

    Every supplied condition must have a configured weight and their sum must
    be positive; the division by the weight total keeps the result on the
    same percentage scale as the inputs.
    """
    if not per_condition:
        raise ValueError("no condition scores supplied")
    total = weights.total(c.condition for c in per_condition)
    if total == 0:
        raise ValueError("weights over the supplied conditions sum to zero")
    wpq = sum((weights[c.condition] * c.pq for c in per_condition), Fraction(0)) / total
    wsq = sum((weights[c.condition] * c.sq for c in per_condition), Fraction(0)) / total
    wrq = sum((weights[c.condition] * c.rq for c in per_condition), Fraction(0)) / total
    return wpq, wsq, wrq


@dataclass(frozen=True)
class MarginScores:
    """Scores for a pooled margin (one weather, one time of day, or all)."""

    pq: Fraction
    sq: Fraction
    rq: Fraction
    n_scenes: int


@dataclass(frozen=True)
class ScoreReport:
    """Full evaluation output for one prediction set."""

    per_condition: tuple[ConditionScores, ...]
    wpq: Fraction
    wsq: Fraction
    wrq: Fraction
    pq_all: Fraction
    sq_all: Fraction
    rq_all: Fraction
    weights_used: WeightConfig = field(default_factory=WeightConfig.default)
    team: str | None = None


MARGIN_KEYS = ("clear", "fog", "rain", "snow", "day", "night", "all")


def _margin_members(key: str) -> tuple[ConditionTag, ...]:
    if key == "all":
        return ConditionTag.all()
    return tuple(t for t in ConditionTag.all() if key in (t.weather.value, t.tod.value))


def condition_breakdown(report: ScoreReport) -> dict[str, MarginScores]:
    """Marginal scores by weather, time of day, and overall.

    Each margin pools the raw counts of its member conditions before any
    score is computed; margins with no scenes (or no present category) are
    omitted.
    """
    by_tag = {c.condition: c for c in report.per_condition}
    out: dict[str, MarginScores] = {}
    for key in MARGIN_KEYS:
        members = [by_tag[t] for t in _margin_members(key) if t in by_tag]
        if not members:
            continue
        pooled: dict[int, ClassScore] = {}
        for cond in members:
            pooled = merge_class_scores(pooled, {s.category_id: s for s in cond.per_class})
        try:
            pq, sq, rq = _mean_scores(pooled)
        except ValueError:
            continue
        out[key] = MarginScores(pq * 100, sq * 100, rq * 100, sum(c.n_scenes for c in members))
    return out


def build_report(
    pooled: Mapping[ConditionTag, Mapping[int, ClassScore]],
    scene_counts: Mapping[ConditionTag, int],
    weights: WeightConfig | None = None,
    team: str | None = None,
) -> ScoreReport:
    """Assemble the final report from pooled per-condition counts."""
    weights = weights or WeightConfig.default()
    per_condition = tuple(
        condition_scores(pooled[tag], tag, scene_counts.get(tag, 0)) for tag in sorted(pooled)
    )
    wpq, wsq, wrq = weighted_scores(per_condition, weights)
    report = ScoreReport(
        per_condition=per_condition,
        wpq=wpq,
        wsq=wsq,
        wrq=wrq,
        pq_all=Fraction(0),
        sq_all=Fraction(0),
        rq_all=Fraction(0),
        weights_used=weights,
        team=team,
    )
    overall = condition_breakdown(report)["all"]
    return replace(report, pq_all=overall.pq, sq_all=overall.sq, rq_all=overall.rq)


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    team: str
    wpq: Fraction
    wsq: Fraction
    wrq: Fraction


def rank_submissions(reports: Sequence[tuple[str, ScoreReport]]) -> list[LeaderboardRow]:
    """Order teams by wpq, breaking ties by wsq, wrq, then team name."""
    if not reports:
        raise ValueError("cannot rank an empty list of reports")
    ordered = sorted(reports, key=lambda item: (-item[1].wpq, -item[1].wsq, -item[1].wrq, item[0]))
    return [
        LeaderboardRow(rank, team, r.wpq, r.wsq, r.wrq)
        for rank, (team, r) in enumerate(ordered, start=1)
    ]


def leaderboard_markdown(rows: Sequence[LeaderboardRow]) -> str:
    """Aligned-column Markdown leaderboard, scores at two decimals."""
    header = ["Rank", "team name", "wPQ", "wSQ", "wRQ"]
    body = [
        [str(r.rank), r.team, f"{float(r.wpq):.2f}", f"{float(r.wsq):.2f}", f"{float(r.wrq):.2f}"]
        for r in rows
    ]
    widths = [max(len(col[i]) for col in [header] + body) for i in range(len(header))]
    lines = [
        "| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |"
        for row in [header] + body
    ]
    lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


def leaderboard_json(rows: Sequence[LeaderboardRow]) -> str:
    payload = [
        {
            "rank": r.rank,
            "team": r.team,
            "wpq": float(r.wpq),
            "wsq": float(r.wsq),
            "wrq": float(r.wrq),
        }
        for r in rows
    ]
    return json.dumps(payload, indent=2) + "\n"


def _class_payload(score: ClassScore) -> dict:
    entry = {
        "category_id": score.category_id,
        "tp": score.tp_count,
        "fp": score.fp_count,
        "fn": score.fn_count,
        "iou_sum": float(score.iou_sum),
    }
    if not score.absent:
        pq, sq, rq = class_pq(score)
        entry.update(pq=float(pq), sq=float(sq), rq=float(rq))
    return entry


def report_to_json(report: ScoreReport) -> str:
    """Serialize a report; floats only appear here, at the boundary."""
    payload: dict = {
        "wpq": float(report.wpq),
        "wsq": float(report.wsq),
        "wrq": float(report.wrq),
        "pq_all": float(report.pq_all),
        "sq_all": float(report.sq_all),
        "rq_all": float(report.rq_all),
        "weights": {str(tag): float(lam) for tag, lam in sorted(report.weights_used.weights.items())},
        "per_condition": [
            {
                "condition": str(c.condition),
                "n_scenes": c.n_scenes,
                "pq": float(c.pq),
                "sq": float(c.sq),
                "rq": float(c.rq),
                "per_class": [_class_payload(s) for s in c.per_class],
            }
            for c in report.per_condition
        ],
        "marginals": {
            key: {
                "pq": float(m.pq),
                "sq": float(m.sq),
                "rq": float(m.rq),
                "n_scenes": m.n_scenes,
            }
            for key, m in condition_breakdown(report).items()
        },
    }
    if report.team is not None:
        payload["team"] = report.team
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_from_json(raw: bytes | str) -> ScoreReport:
    """Parse a serialized report.

    Only the weighted triple is mandatory, so externally produced score files
    that carry nothing else can still be ranked.
    """
    payload = json.loads(raw)
    try:
        wpq = Fraction(payload["wpq"])
        wsq = Fraction(payload["wsq"])
        wrq = Fraction(payload["wrq"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"report is missing a weighted score: {exc}") from exc
    per_condition = []
    for cond in payload.get("per_condition", []):
        per_class = tuple(
            ClassScore(
                category_id=int(s["category_id"]),
                tp_count=int(s["tp"]),
                fp_count=int(s["fp"]),
                fn_count=int(s["fn"]),
                iou_sum=Fraction(s["iou_sum"]),
            )
            for s in cond.get("per_class", [])
        )
        per_condition.append(
            ConditionScores(
                condition=ConditionTag.parse(cond["condition"]),
                pq=Fraction(cond["pq"]),
                sq=Fraction(cond["sq"]),
                rq=Fraction(cond["rq"]),
                per_class=per_class,
                n_scenes=int(cond.get("n_scenes", 0)),
            )
        )
    weights = (
        WeightConfig.from_json(json.dumps(payload["weights"]))
        if "weights" in payload
        else WeightConfig.default()
    )
    return ScoreReport(
        per_condition=tuple(per_condition),
        wpq=wpq,
        wsq=wsq,
        wrq=wrq,
        pq_all=Fraction(payload.get("pq_all", 0)),
        sq_all=Fraction(payload.get("sq_all", 0)),
        rq_all=Fraction(payload.get("rq_all", 0)),
        weights_used=weights,
        team=payload.get("team"),
    )
