"""Segment matching between a ground-truth and a predicted label map.

A prediction matches a ground-truth segment of the same category when their
IoU exceeds 0.5; that threshold makes the matching a partial bijection, so
no tie-breaking is ever needed. Predicted pixels lying on void ground truth
are removed from the prediction's effective area before the IoU test, and an
unmatched prediction that is more than half void is not counted as a false
positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .labelio import MAX_SEGMENT_ID, CategoryTable, PanopticLabelMap


@dataclass(frozen=True)
class ContingencyTable:
    """Exact pixel-overlap counts for one (ground truth, prediction) pair."""

    width: int
    height: int
    # (gt_id, pred_id) -> intersection pixels, non-void ids on both sides
    entries: dict[tuple[int, int], int]
    gt_areas: dict[int, int]
    pred_areas: dict[int, int]
    # pred_id -> pixels overlapping void ground truth
    void_overlap: dict[int, int]


def build_contingency(gt: PanopticLabelMap, pred: PanopticLabelMap) -> ContingencyTable:
    """Single-pass joint histogram of the two id grids."""
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValueError(
            f"dimension mismatch: gt {gt.width}x{gt.height} vs pred {pred.width}x{pred.height}"
        )
    # Pack both ids into one int64 key; ids are < 2^24 so this cannot collide.
    combined = gt.ids * MAX_SEGMENT_ID + pred.ids
    keys, counts = np.unique(combined, return_counts=True)
    entries: dict[tuple[int, int], int] = {}
    void_overlap: dict[int, int] = {}
    for key, count in zip(keys.tolist(), counts.tolist()):
        gt_id, pred_id = divmod(key, MAX_SEGMENT_ID)
        if pred_id == pred.void_id:
            continue
        if gt_id == gt.void_id:
            void_overlap[pred_id] = void_overlap.get(pred_id, 0) + count
        else:
            entries[(gt_id, pred_id)] = count
    return ContingencyTable(
        width=gt.width,
        height=gt.height,
        entries=entries,
        gt_areas={s.segment_id: s.area for s in gt.segments},
        pred_areas={s.segment_id: s.area for s in pred.segments},
        void_overlap=void_overlap,
    )


@dataclass(frozen=True)
class TruePositive:
    category_id: int
    gt_id: int
    pred_id: int
    iou: Fraction  # exact intersection/union, always in (1/2, 1]


@dataclass(frozen=True)
class MatchResult:
    """TP pairs with IoU plus unmatched segments, each tagged by category."""

    tp: tuple[TruePositive, ...]
    fp: tuple[tuple[int, int], ...]  # (category_id, pred_id)
    fn: tuple[tuple[int, int], ...]  # (category_id, gt_id)

    def __post_init__(self) -> None:
        gt_seen = [p.gt_id for p in self.tp]
        pred_seen = [p.pred_id for p in self.tp]
        if len(set(gt_seen)) != len(gt_seen) or len(set(pred_seen)) != len(pred_seen):
            raise ValueError("matching is not a partial bijection")
        for pair in self.tp:
            if not Fraction(1, 2) < pair.iou <= 1:
                raise ValueError(f"tp pair {pair} has IoU outside (0.5, 1]")


def _canonical(
    tp: list[TruePositive], fp: list[tuple[int, int]], fn: list[tuple[int, int]]
) -> MatchResult:
    return MatchResult(
        tp=tuple(sorted(tp, key=lambda p: (p.category_id, p.gt_id))),
        fp=tuple(sorted(fp)),
        fn=tuple(sorted(fn)),
    )


def match_segments(
    table: ContingencyTable,
    gt: PanopticLabelMap,
    pred: PanopticLabelMap,
    cats: CategoryTable,
) -> MatchResult:
    """Produce the unique IoU > 0.5 matching for one image pair.

    The threshold is evaluated as ``2 * intersection > union`` on exact pixel
    counts, so it carries no floating-point ambiguity.
    """
    gt_cat = gt.category_of()
    pred_cat = pred.category_of()

    tp: list[TruePositive] = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    for (gt_id, pred_id), inter in sorted(table.entries.items()):
        category = gt_cat[gt_id]
        if category != pred_cat[pred_id]:
            continue
        effective_pred = table.pred_areas[pred_id] - table.void_overlap.get(pred_id, 0)
        union = table.gt_areas[gt_id] + effective_pred - inter
        if 2 * inter > union:
            tp.append(TruePositive(category, gt_id, pred_id, Fraction(inter, union)))
            matched_gt.add(gt_id)
            matched_pred.add(pred_id)

    fn = [(gt_cat[g], g) for g in table.gt_areas if g not in matched_gt]
    fp = []
    for p, area in table.pred_areas.items():
        if p in matched_pred:
            continue
        # void-dominated predictions are not penalized
        if 2 * table.void_overlap.get(p, 0) > area:
            continue
        fp.append((pred_cat[p], p))
    return _canonical(tp, fp, fn)
