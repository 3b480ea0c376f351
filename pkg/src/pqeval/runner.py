"""Manifest-driven evaluation: decode scenes, match, pool, report.

Per-scene work (decode + match) runs on a thread pool; pooling uses the
associative merge from :mod:`.metrics`, and all score arithmetic is exact,
so the report is byte-identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .conditions import ConditionTag, WeightConfig
from .labelio import CategoryTable, PanopticLabelMap, SceneManifest, read_label_map
from .matching import MatchResult, build_contingency, match_segments
from .metrics import ScoreReport, accumulate, build_report


@dataclass(frozen=True)
class SceneFault:
    """One per-scene failure, attributed by scene id."""

    scene_id: str | None
    reason: str

    def __str__(self) -> str:
        return f"{self.scene_id or 'archive'}: {self.reason}"


class EvaluationError(Exception):
    """Evaluation aborted; carries every scene fault encountered."""

    def __init__(self, faults: Sequence[SceneFault]):
        self.faults = tuple(faults)
        summary = "; ".join(str(f) for f in self.faults[:5])
        extra = f" (+{len(self.faults) - 5} more)" if len(self.faults) > 5 else ""
        super().__init__(f"{len(self.faults)} scene fault(s): {summary}{extra}")


def evaluate_pair(
    gt: PanopticLabelMap, pred: PanopticLabelMap, cats: CategoryTable
) -> MatchResult:
    """Match one decoded (ground truth, prediction) pair."""
    return match_segments(build_contingency(gt, pred), gt, pred, cats)


def find_prediction(pred_root: Path, scene_id: str) -> Path:
    """Locate ``<scene_id>.png`` at the root or one directory below it."""
    flat = pred_root / f"{scene_id}.png"
    if flat.is_file():
        return flat
    nested = sorted(p for p in pred_root.glob(f"*/{scene_id}.png") if p.is_file())
    if len(nested) == 1:
        return nested[0]
    if len(nested) > 1:
        raise FileNotFoundError(f"prediction for {scene_id} found in multiple places")
    raise FileNotFoundError(f"no prediction named {scene_id}.png under {pred_root}")


def resolve_gt_path(scene: SceneManifest, base_dir: Path | None) -> Path:
    path = Path(scene.gt_path)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return path


def _evaluate_scene(
    scene: SceneManifest,
    gt_base_dir: Path | None,
    pred_root: Path,
    cats: CategoryTable,
) -> MatchResult:
    gt = read_label_map(resolve_gt_path(scene, gt_base_dir), cats)
    pred = read_label_map(find_prediction(pred_root, scene.scene_id), cats)
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValueError(
            f"dimension mismatch: gt {gt.width}x{gt.height} vs pred {pred.width}x{pred.height}"
        )
    return evaluate_pair(gt, pred, cats)


def evaluate_manifest(
    manifest: Sequence[SceneManifest],
    pred_root: Path,
    gt_base_dir: Path | None = None,
    cats: CategoryTable | None = None,
    weights: WeightConfig | None = None,
    threads: int = 1,
    team: str | None = None,
) -> ScoreReport:
    """Evaluate every manifest scene against predictions under ``pred_root``.

    Raises:
        EvaluationError: one or more scenes failed; all faults are gathered
            before raising so a bad submission is reported in full.
        ValueError: empty manifest or nothing scoreable.
    """
    if not manifest:
        raise ValueError("manifest lists no scenes")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    cats = cats or CategoryTable.default()

    def work(scene: SceneManifest) -> tuple[str, MatchResult | None, SceneFault | None]:
        try:
            return scene.scene_id, _evaluate_scene(scene, gt_base_dir, pred_root, cats), None
        except Exception as exc:
            return scene.scene_id, None, SceneFault(scene.scene_id, str(exc))

    if threads == 1:
        outcomes = [work(scene) for scene in manifest]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, manifest))

    faults = [fault for _, _, fault in outcomes if fault is not None]
    if faults:
        raise EvaluationError(sorted(faults, key=lambda f: (f.scene_id or "", f.reason)))

    by_scene = {scene_id: match for scene_id, match, _ in outcomes}
    stream = [(by_scene[scene.scene_id], scene.condition) for scene in manifest]
    pooled = accumulate(stream)
    scene_counts: dict[ConditionTag, int] = {}
    for scene in manifest:
        scene_counts[scene.condition] = scene_counts.get(scene.condition, 0) + 1
    return build_report(pooled, scene_counts, weights=weights, team=team)
