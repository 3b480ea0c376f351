"""Brute-force reference scorer and a seeded synthetic scene generator.

The matching and scoring routines here deliberately share no logic with the
fast path: matching is done by per-pixel Python set operations, scores by a
plain-float transcription of the defining formulas. Differential tests drive
both paths over generated scenes and demand agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .conditions import ConditionTag, WeightConfig
from .labelio import (
    CategoryTable,
    PanopticLabelMap,
    SceneManifest,
    SegmentInfo,
    Split,
    dump_manifest,
    write_label_map,
)
from .matching import MatchResult, TruePositive, build_contingency, match_segments
from .metrics import MARGIN_KEYS, _margin_members, accumulate, build_report

ORACLE_MAX_SIDE = 64  # quadratic pair enumeration stays fast below this


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic (ground truth, prediction) pair.

    The prediction is the ground truth degraded by seeded perturbations:
    ``perturb_strength`` erodes segment boundaries into void (0 means the
    prediction equals the ground truth byte for byte), ``drop_segments``
    voids whole segments, ``split_segments`` cuts segments in two, and
    ``flip_segments`` reassigns categories.
    """

    width: int
    height: int
    n_segments: int = 4
    n_classes: int = 6
    void_fraction: float = 0.0
    seed: int = 0
    perturb_strength: float = 0.0
    drop_segments: int = 0
    split_segments: int = 0
    flip_segments: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if not 1 <= self.n_segments <= 8:
            raise ValueError(f"n_segments must be in 1..8, got {self.n_segments}")
        if self.n_segments > self.width * self.height:
            raise ValueError("more segments than pixels")
        if not 1 <= self.n_classes <= 19:
            raise ValueError(f"n_classes must be in 1..19, got {self.n_classes}")
        if not 0.0 <= self.void_fraction <= 0.5:
            raise ValueError(f"void_fraction must be in [0, 0.5], got {self.void_fraction}")
        if not 0.0 <= self.perturb_strength <= 1.0:
            raise ValueError(f"perturb_strength must be in [0, 1], got {self.perturb_strength}")
        if min(self.drop_segments, self.split_segments, self.flip_segments) < 0:
            raise ValueError("perturbation counts must be >= 0")


def _build_map(
    ids: np.ndarray, id_to_class: Mapping[int, int], cats: CategoryTable
) -> PanopticLabelMap:
    """Assemble a label map from a grid and an id -> class-index mapping."""
    height, width = ids.shape
    present, counts = np.unique(ids, return_counts=True)
    segments = [
        SegmentInfo(int(sid), cats.ids[id_to_class[int(sid)]], int(count))
        for sid, count in zip(present.tolist(), counts.tolist())
        if sid != cats.void_id
    ]
    return PanopticLabelMap(width, height, ids, segments, void_id=cats.void_id)


def generate_scene(
    spec: SynthSpec, cats: CategoryTable | None = None
) -> tuple[PanopticLabelMap, PanopticLabelMap, ConditionTag]:
    """Deterministically generate a (ground truth, prediction, condition) triple.

    Ground truth is a Voronoi partition of seeded sites, with the farthest
    non-site pixels turned to void; every site survives, so the ground truth
    always carries exactly ``n_segments`` segments. The prediction applies
    the configured perturbations in a fixed order: drop, flip, split, erode.
    """
    cats = cats or CategoryTable.default()
    if spec.n_classes > len(cats):
        raise ValueError(f"n_classes {spec.n_classes} exceeds taxonomy size {len(cats)}")
    rng = np.random.default_rng(spec.seed)
    void_id = cats.void_id
    w, h, n = spec.width, spec.height, spec.n_segments

    tag = ConditionTag.all()[int(rng.integers(0, 8))]

    flat_sites = rng.choice(w * h, size=n, replace=False)
    sy, sx = np.divmod(flat_sites, w)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[None] - sy[:, None, None]) ** 2 + (xx[None] - sx[:, None, None]) ** 2
    ids = np.argmin(d2, axis=0).astype(np.int64) + 1  # ties go to the lowest site

    n_void = min(int(round(spec.void_fraction * w * h)), w * h - n)
    if n_void > 0:
        min_d2 = np.min(d2, axis=0).reshape(-1)
        farthest_first = np.lexsort((np.arange(w * h), -min_d2))
        site_mask = np.zeros(w * h, dtype=bool)
        site_mask[flat_sites] = True
        chosen = farthest_first[~site_mask[farthest_first]][:n_void]
        ids.reshape(-1)[chosen] = void_id

    class_idx = {i + 1: int(c) for i, c in enumerate(rng.integers(0, spec.n_classes, size=n))}
    gt = _build_map(ids, class_idx, cats)

    pred_ids = ids.copy()
    pred_class = dict(class_idx)
    alive = sorted(pred_class)

    k = min(spec.drop_segments, len(alive))
    if k > 0:
        for sid in sorted(int(s) for s in rng.choice(np.array(alive), size=k, replace=False)):
            pred_ids[pred_ids == sid] = void_id
            del pred_class[sid]
            alive.remove(sid)

    k = min(spec.flip_segments, len(alive))
    if k > 0 and spec.n_classes > 1:
        for sid in sorted(int(s) for s in rng.choice(np.array(alive), size=k, replace=False)):
            shift = int(rng.integers(1, spec.n_classes))
            pred_class[sid] = (pred_class[sid] + shift) % spec.n_classes

    k = min(spec.split_segments, len(alive))
    if k > 0:
        next_id = max(alive) + 1
        for sid in sorted(int(s) for s in rng.choice(np.array(alive), size=k, replace=False)):
            mask = pred_ids == sid
            axis = int(rng.integers(0, 2))
            for grid in (yy, xx) if axis == 0 else (xx, yy):
                coords = grid[mask]
                lo, hi = int(coords.min()), int(coords.max())
                if lo < hi:
                    cut = int(rng.integers(lo, hi))  # both halves stay nonempty
                    if next_id == void_id:
                        next_id += 1
                    pred_ids[mask & (grid > cut)] = next_id
                    pred_class[next_id] = pred_class[sid]
                    next_id += 1
                    break

    for _ in range(int(round(spec.perturb_strength * 3))):
        a = pred_ids
        boundary = np.zeros_like(a, dtype=bool)
        boundary[1:, :] |= a[1:, :] != a[:-1, :]
        boundary[:-1, :] |= a[:-1, :] != a[1:, :]
        boundary[:, 1:] |= a[:, 1:] != a[:, :-1]
        boundary[:, :-1] |= a[:, :-1] != a[:, 1:]
        boundary &= a != void_id
        if not boundary.any():
            break
        pred_ids = a.copy()
        pred_ids[boundary] = void_id

    pred = _build_map(pred_ids, pred_class, cats)
    return gt, pred, tag


def write_scene_tree(
    root: Path,
    template: SynthSpec,
    n_scenes: int,
    cats: CategoryTable | None = None,
) -> Path:
    """Write gt/, pred/ and manifest.json under ``root``; returns the manifest path.

    Scene i uses ``template.seed + i`` and cycles through the eight
    conditions round robin, so any n_scenes >= 8 covers them all.
    """
    gt_dir = root / "gt"
    pred_dir = root / "pred"
    gt_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    tags = ConditionTag.all()
    records = []
    for i in range(n_scenes):
        gt, pred, _ = generate_scene(replace(template, seed=template.seed + i), cats)
        scene_id = f"scene_{i:04d}"
        write_label_map(gt, gt_dir / f"{scene_id}.png")
        write_label_map(pred, pred_dir / f"{scene_id}.png")
        records.append(SceneManifest(scene_id, tags[i % len(tags)], f"gt/{scene_id}.png", Split.VAL))
    manifest_path = root / "manifest.json"
    manifest_path.write_text(dump_manifest(records))
    return manifest_path


def oracle_match(gt: PanopticLabelMap, pred: PanopticLabelMap) -> MatchResult:
    """Reference matching by explicit per-pixel set arithmetic.

    Enumerates every same-category (gt, pred) pair, even non-overlapping
    ones, and applies the IoU > 1/2 rule with exact rational IoU. Capped at
    64x64 because the enumeration is quadratic in segment count and the
    pixel sets are plain Python objects.
    """
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValueError(
            f"dimension mismatch: gt {gt.width}x{gt.height} vs pred {pred.width}x{pred.height}"
        )
    if gt.width > ORACLE_MAX_SIDE or gt.height > ORACLE_MAX_SIDE:
        raise ValueError(f"oracle handles maps up to {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE} only")

    gt_pixels: dict[int, set[tuple[int, int]]] = {}
    pred_pixels: dict[int, set[tuple[int, int]]] = {}
    void_pixels: set[tuple[int, int]] = set()
    for y in range(gt.height):
        for x in range(gt.width):
            g = int(gt.ids[y, x])
            if g == gt.void_id:
                void_pixels.add((x, y))
            else:
                gt_pixels.setdefault(g, set()).add((x, y))
            p = int(pred.ids[y, x])
            if p != pred.void_id:
                pred_pixels.setdefault(p, set()).add((x, y))

    gt_cat = gt.category_of()
    pred_cat = pred.category_of()
    tp: list[TruePositive] = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    for g_id, g_px in gt_pixels.items():
        for p_id, p_px in pred_pixels.items():
            if gt_cat[g_id] != pred_cat[p_id]:
                continue
            union = g_px | (p_px - void_pixels)
            inter = g_px & p_px
            if 2 * len(inter) > len(union):
                tp.append(TruePositive(gt_cat[g_id], g_id, p_id, Fraction(len(inter), len(union))))
                matched_gt.add(g_id)
                matched_pred.add(p_id)

    fn = [(gt_cat[g], g) for g in gt_pixels if g not in matched_gt]
    fp = [
        (pred_cat[p], p)
        for p, px in pred_pixels.items()
        if p not in matched_pred and 2 * len(px & void_pixels) <= len(px)
    ]
    return MatchResult(
        tp=tuple(sorted(tp, key=lambda pair: (pair.category_id, pair.gt_id))),
        fp=tuple(sorted(fp)),
        fn=tuple(sorted(fn)),
    )


def oracle_pq(
    results: Iterable[tuple[MatchResult, ConditionTag]],
    weights: WeightConfig | None = None,
) -> dict:
    """Reference scores by direct float transcription of the formulas.

    Returns a dict with per-condition scores, the weighted triple, and the
    weather / time-of-day / overall marginals; percentage scale throughout.
    Empty input yields empty tables and ``None`` weighted scores.
    """
    weights = weights or WeightConfig.default()
    counts: dict[ConditionTag, dict[int, list]] = {}
    for match, tag in results:
        per_class = counts.setdefault(tag, {})

        def cell(cid: int) -> list:
            return per_class.setdefault(cid, [0, 0, 0, 0.0])

        for pair in match.tp:
            c = cell(pair.category_id)
            c[0] += 1
            c[3] += float(pair.iou)
        for cid, _ in match.fp:
            cell(cid)[1] += 1
        for cid, _ in match.fn:
            cell(cid)[2] += 1

    def mean_scores(per_class: dict[int, list]) -> tuple[float, float, float] | None:
        pqs, sqs, rqs = [], [], []
        for tp_n, fp_n, fn_n, iou_s in per_class.values():
            if tp_n + fp_n + fn_n == 0:
                continue
            denom = tp_n + 0.5 * fp_n + 0.5 * fn_n
            pqs.append(iou_s / denom)
            sqs.append(iou_s / tp_n if tp_n > 0 else 0.0)
            rqs.append(tp_n / denom)
        if not pqs:
            return None
        n = len(pqs)
        return 100.0 * sum(pqs) / n, 100.0 * sum(sqs) / n, 100.0 * sum(rqs) / n

    per_condition: dict[str, dict[str, float]] = {}
    for tag in sorted(counts):
        scores = mean_scores(counts[tag])
        if scores is not None:
            per_condition[str(tag)] = {"pq": scores[0], "sq": scores[1], "rq": scores[2]}

    wpq = wsq = wrq = None
    present_tags = [tag for tag in sorted(counts) if str(tag) in per_condition]
    lam_total = sum(float(weights[tag]) for tag in present_tags)
    if present_tags and lam_total > 0:
        wpq = sum(float(weights[t]) * per_condition[str(t)]["pq"] for t in present_tags) / lam_total
        wsq = sum(float(weights[t]) * per_condition[str(t)]["sq"] for t in present_tags) / lam_total
        wrq = sum(float(weights[t]) * per_condition[str(t)]["rq"] for t in present_tags) / lam_total

    marginals: dict[str, dict[str, float]] = {}
    for key in MARGIN_KEYS:
        pooled: dict[int, list] = {}
        hit = False
        for tag in _margin_members(key):
            if tag not in counts:
                continue
            hit = True
            for cid, cell_counts in counts[tag].items():
                acc = pooled.setdefault(cid, [0, 0, 0, 0.0])
                for i in range(3):
                    acc[i] += cell_counts[i]
                acc[3] += cell_counts[3]
        if not hit:
            continue
        scores = mean_scores(pooled)
        if scores is not None:
            marginals[key] = {"pq": scores[0], "sq": scores[1], "rq": scores[2]}

    return {
        "per_condition": per_condition,
        "wpq": wpq,
        "wsq": wsq,
        "wrq": wrq,
        "marginals": marginals,
    }


@dataclass(frozen=True)
class DifferentialMismatch:
    """One disagreement between the fast path and the oracle."""

    spec: SynthSpec
    detail: str


def random_spec(
    rng: np.random.Generator,
    max_side: int = 16,
    max_segments: int = 6,
    max_void: float = 0.3,
) -> SynthSpec:
    """Draw a randomized SynthSpec for differential testing."""
    width = int(rng.integers(2, max_side + 1))
    height = int(rng.integers(2, max_side + 1))
    return SynthSpec(
        width=width,
        height=height,
        n_segments=int(rng.integers(1, min(max_segments, width * height) + 1)),
        n_classes=int(rng.integers(1, 7)),
        void_fraction=float(rng.uniform(0.0, max_void)),
        seed=int(rng.integers(0, 2**63)),
        perturb_strength=float(rng.uniform(0.0, 1.0)),
        drop_segments=int(rng.integers(0, 2)),
        split_segments=int(rng.integers(0, 3)),
        flip_segments=int(rng.integers(0, 3)),
    )


def check_spec(
    spec: SynthSpec,
    cats: CategoryTable | None = None,
    tolerance: float = 1e-12,
    fast_matcher: Callable[..., MatchResult] | None = None,
) -> DifferentialMismatch | None:
    """Run both evaluation paths over one generated scene and compare.

    ``fast_matcher`` exists so self-tests can inject a broken fast path and
    confirm the comparison actually detects disagreements.
    """
    cats = cats or CategoryTable.default()
    gt, pred, tag = generate_scene(spec, cats)
    if fast_matcher is None:
        fast = match_segments(build_contingency(gt, pred), gt, pred, cats)
    else:
        fast = fast_matcher(build_contingency(gt, pred), gt, pred, cats)
    slow = oracle_match(gt, pred)
    if fast != slow:
        return DifferentialMismatch(spec, f"match results differ: fast={fast} oracle={slow}")

    ref = oracle_pq([(slow, tag)])
    try:
        report = build_report(accumulate([(fast, tag)]), {tag: 1})
    except ValueError:
        # no present class on the fast side; the oracle must agree
        if ref["per_condition"]:
            return DifferentialMismatch(spec, "fast path found no classes but oracle scored some")
        return None

    checks: list[tuple[str, float, float]] = [
        ("wpq", float(report.wpq), ref["wpq"]),
        ("wsq", float(report.wsq), ref["wsq"]),
        ("wrq", float(report.wrq), ref["wrq"]),
    ]
    for cond in report.per_condition:
        ref_cond = ref["per_condition"].get(str(cond.condition))
        if ref_cond is None:
            return DifferentialMismatch(spec, f"oracle missing condition {cond.condition}")
        checks += [
            (f"{cond.condition} pq", float(cond.pq), ref_cond["pq"]),
            (f"{cond.condition} sq", float(cond.sq), ref_cond["sq"]),
            (f"{cond.condition} rq", float(cond.rq), ref_cond["rq"]),
        ]
    from .metrics import condition_breakdown

    margins = condition_breakdown(report)
    if set(margins) != set(ref["marginals"]):
        return DifferentialMismatch(
            spec, f"marginal keys differ: fast={sorted(margins)} oracle={sorted(ref['marginals'])}"
        )
    for key, margin in margins.items():
        ref_margin = ref["marginals"][key]
        checks += [
            (f"margin {key} pq", float(margin.pq), ref_margin["pq"]),
            (f"margin {key} sq", float(margin.sq), ref_margin["sq"]),
            (f"margin {key} rq", float(margin.rq), ref_margin["rq"]),
        ]
    for label, fast_value, slow_value in checks:
        if slow_value is None or abs(fast_value - slow_value) >= tolerance:
            return DifferentialMismatch(
                spec, f"{label}: fast {fast_value!r} vs oracle {slow_value!r}"
            )
    return None


def run_differential(
    n_cases: int,
    seed: int = 0,
    max_side: int = 16,
    max_segments: int = 6,
    max_void: float = 0.3,
    fast_matcher: Callable[..., MatchResult] | None = None,
) -> tuple[int, list[DifferentialMismatch]]:
    """Compare both paths over ``n_cases`` random scenes; returns (run, mismatches)."""
    rng = np.random.default_rng(seed)
    cats = CategoryTable.default()
    mismatches = []
    for _ in range(n_cases):
        spec = random_spec(rng, max_side=max_side, max_segments=max_segments, max_void=max_void)
        found = check_spec(spec, cats, fast_matcher=fast_matcher)
        if found is not None:
            mismatches.append(found)
    return n_cases, mismatches
