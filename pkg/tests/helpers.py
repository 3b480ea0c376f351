"""Shared fixtures and map-building helpers for the test suite."""

from __future__ import annotations

import numpy as np

from pqeval import CategoryTable, PanopticLabelMap, SegmentInfo

VOID = 255


def make_map(grid, cat_of: dict[int, int], void_id: int = VOID) -> PanopticLabelMap:
    """Build a label map from a nested list / array and an id -> category dict."""
    a = np.asarray(grid, dtype=np.int64)
    present, counts = np.unique(a, return_counts=True)
    segments = [
        SegmentInfo(int(sid), cat_of[int(sid)], int(count))
        for sid, count in zip(present.tolist(), counts.tolist())
        if sid != void_id
    ]
    height, width = a.shape
    return PanopticLabelMap(width, height, a, segments, void_id)


def four_by_four_pair(cats: CategoryTable) -> tuple[PanopticLabelMap, PanopticLabelMap]:
    """The hand-checked 4x4 scene: one car segment, 3-of-4-pixel overlap.

    Ground truth: car segment (id 1) on the top row, road (id 2) elsewhere.
    Prediction: car segment (id 9) on three top-row pixels plus one pixel on
    the road below, road (id 8) elsewhere. Car IoU is 3/5; the road pair
    matches at 11/13.
    """
    car, road = 13, 0
    gt = make_map(
        [
            [1, 1, 1, 1],
            [2, 2, 2, 2],
            [2, 2, 2, 2],
            [2, 2, 2, 2],
        ],
        {1: car, 2: road},
    )
    pred = make_map(
        [
            [8, 9, 9, 9],
            [9, 8, 8, 8],
            [8, 8, 8, 8],
            [8, 8, 8, 8],
        ],
        {9: car, 8: road},
    )
    return gt, pred
