"""Panoptic quality evaluation with weather-stratified challenge scoring.

The package splits into label IO (PNG + sidecar codecs, taxonomy,
manifests), segment matching, score pooling and weighting, a brute-force
oracle with a synthetic scene generator, a manifest evaluation runner, a
challenge submission harness, and a CLI binding them together.
"""

from .conditions import CLEAR_DAY, ConditionTag, TimeOfDay, Weather, WeightConfig
from .harness import (
    ChallengeHarness,
    Phase,
    PhaseConfig,
    QuotaLedger,
    SubmissionRecord,
    validate_submission,
)
from .labelio import (
    AreaMismatchWarning,
    Category,
    CategoryTable,
    LabelMapError,
    ManifestError,
    PanopticLabelMap,
    SceneManifest,
    SegmentInfo,
    Split,
    decode_label_map,
    dump_manifest,
    encode_label_map,
    load_manifest,
    read_label_map,
    write_label_map,
)
from .matching import ContingencyTable, MatchResult, TruePositive, build_contingency, match_segments
from .metrics import (
    ClassScore,
    ConditionScores,
    LeaderboardRow,
    ScoreReport,
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
from .oracle import SynthSpec, generate_scene, oracle_match, oracle_pq, run_differential
from .runner import EvaluationError, SceneFault, evaluate_manifest, evaluate_pair

__version__ = "0.1.0"

__all__ = [
    "AreaMismatchWarning",
    "CLEAR_DAY",
    "Category",
    "CategoryTable",
    "ChallengeHarness",
    "ClassScore",
    "ConditionScores",
    "ConditionTag",
    "ContingencyTable",
    "EvaluationError",
    "LabelMapError",
    "LeaderboardRow",
    "ManifestError",
    "MatchResult",
    "PanopticLabelMap",
    "Phase",
    "PhaseConfig",
    "QuotaLedger",
    "SceneFault",
    "SceneManifest",
    "ScoreReport",
    "SegmentInfo",
    "Split",
    "SubmissionRecord",
    "SynthSpec",
    "TimeOfDay",
    "TruePositive",
    "Weather",
    "WeightConfig",
    "accumulate",
    "build_contingency",
    "build_report",
    "class_pq",
    "condition_breakdown",
    "condition_scores",
    "decode_label_map",
    "dump_manifest",
    "encode_label_map",
    "evaluate_manifest",
    "evaluate_pair",
    "generate_scene",
    "leaderboard_json",
    "leaderboard_markdown",
    "load_manifest",
    "match_segments",
    "merge_class_scores",
    "oracle_match",
    "oracle_pq",
    "rank_submissions",
    "read_label_map",
    "report_from_json",
    "report_to_json",
    "run_differential",
    "scene_scores",
    "validate_submission",
    "weighted_scores",
    "write_label_map",
]
