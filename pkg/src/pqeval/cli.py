"""Command-line interface.

Subcommands: evaluate, rank, validate, synth, oracle-check. Exit codes are
a stable contract: 0 success, 1 evaluation or validation faults, 2 usage
errors. Identical inputs produce byte-identical output files regardless of
thread count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .conditions import WeightConfig
from .harness import validate_submission
from .labelio import CategoryTable, load_manifest
from .metrics import (
    ScoreReport,
    condition_breakdown,
    leaderboard_json,
    leaderboard_markdown,
    rank_submissions,
    report_from_json,
    report_to_json,
)
from .oracle import SynthSpec, run_differential, write_scene_tree
from .runner import EvaluationError, evaluate_manifest

THREADS_ENV = "PQEVAL_THREADS"
EXIT_OK = 0
EXIT_FAULTS = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad invocation (missing file, malformed config); maps to exit 2."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved inputs of one evaluate run."""

    manifest_path: Path
    pred_dir: Path
    gt_dir: Path | None = None
    categories_path: Path | None = None
    weights_path: Path | None = None
    threads: int = 4
    output_path: Path | None = None
    format: str = "json"

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise UsageError(f"threads must be >= 1, got {self.threads}")
        if self.format not in ("json", "csv", "markdown"):
            raise UsageError(f"unknown format {self.format!r}")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 4
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_categories(path: Path | None) -> CategoryTable:
    if path is None:
        return CategoryTable.default()
    try:
        return CategoryTable.from_json(_require_file(path, "categories file").read_text())
    except ValueError as exc:
        raise UsageError(f"bad categories file {path}: {exc}") from None


def _load_weights(path: Path | None) -> WeightConfig:
    if path is None:
        return WeightConfig.default()
    try:
        return WeightConfig.from_json(_require_file(path, "weights file").read_text())
    except ValueError as exc:
        raise UsageError(f"bad weights file {path}: {exc}") from None


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _two(value) -> str:
    return f"{float(value):.2f}"


def render_report_markdown(report: ScoreReport) -> str:
    """Human-readable report: weighted block, per-condition table, marginals."""
    lines = ["# Evaluation report", ""]
    if report.team:
        lines += [f"Team: {report.team}", ""]
    lines += [
        "## Weighted scores",
        "",
        "| wPQ | wSQ | wRQ |",
        "|-----|-----|-----|",
        f"| {_two(report.wpq)} | {_two(report.wsq)} | {_two(report.wrq)} |",
        "",
        "## Scores by condition",
        "",
        "| Condition | Scenes | PQ | SQ | RQ |",
        "|-----------|--------|----|----|----|",
    ]
    for cond in report.per_condition:
        lines.append(
            f"| {cond.condition} | {cond.n_scenes} | {_two(cond.pq)} "
            f"| {_two(cond.sq)} | {_two(cond.rq)} |"
        )
    lines += [
        "",
        "## Marginals",
        "",
        "| Subset | Scenes | PQ | SQ | RQ |",
        "|--------|--------|----|----|----|",
    ]
    for key, margin in condition_breakdown(report).items():
        lines.append(
            f"| {key} | {margin.n_scenes} | {_two(margin.pq)} "
            f"| {_two(margin.sq)} | {_two(margin.rq)} |"
        )
    return "\n".join(lines) + "\n"


def render_report_csv(report: ScoreReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "key", "n_scenes", "pq", "sq", "rq"])
    total = sum(c.n_scenes for c in report.per_condition)
    writer.writerow(
        ["weighted", "", total, float(report.wpq), float(report.wsq), float(report.wrq)]
    )
    for cond in report.per_condition:
        writer.writerow(
            [
                "condition",
                str(cond.condition),
                cond.n_scenes,
                float(cond.pq),
                float(cond.sq),
                float(cond.rq),
            ]
        )
    for key, margin in condition_breakdown(report).items():
        writer.writerow(
            ["margin", key, margin.n_scenes, float(margin.pq), float(margin.sq), float(margin.rq)]
        )
    return buf.getvalue()


def cmd_evaluate(config: RunConfig) -> int:
    manifest_path = _require_file(config.manifest_path, "manifest")
    pred_dir = _require_dir(config.pred_dir, "prediction directory")
    gt_dir = config.gt_dir
    if gt_dir is not None:
        gt_dir = _require_dir(gt_dir, "ground-truth directory")
    else:
        gt_dir = manifest_path.parent
    cats = _load_categories(config.categories_path)
    weights = _load_weights(config.weights_path)
    try:
        manifest = load_manifest(manifest_path.read_text())
    except ValueError as exc:
        raise UsageError(f"bad manifest {manifest_path}: {exc}") from None

    report = evaluate_manifest(
        manifest,
        pred_dir,
        gt_base_dir=gt_dir,
        cats=cats,
        weights=weights,
        threads=config.threads,
    )
    if config.format == "json":
        rendered = report_to_json(report)
    elif config.format == "markdown":
        rendered = render_report_markdown(report)
    else:
        rendered = render_report_csv(report)
    _emit(rendered, config.output_path)
    return EXIT_OK


def cmd_rank(report_paths: list[Path], fmt: str, out: Path | None) -> int:
    entries = []
    for path in report_paths:
        _require_file(path, "report file")
        try:
            report = report_from_json(path.read_text())
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad report file {path}: {exc}") from None
        entries.append((report.team or path.stem, report))
    rows = rank_submissions(entries)
    if fmt == "markdown":
        rendered = leaderboard_markdown(rows)
    elif fmt == "json":
        rendered = leaderboard_json(rows)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "team", "wpq", "wsq", "wrq"])
        for row in rows:
            writer.writerow([row.rank, row.team, float(row.wpq), float(row.wsq), float(row.wrq)])
        rendered = buf.getvalue()
    _emit(rendered, out)
    return EXIT_OK


def cmd_validate(
    archive: Path, manifest_path: Path, gt_dir: Path | None, categories_path: Path | None
) -> int:
    _require_file(manifest_path, "manifest")
    if not archive.exists():
        raise UsageError(f"archive not found: {archive}")
    cats = _load_categories(categories_path)
    try:
        manifest = load_manifest(manifest_path.read_text())
    except ValueError as exc:
        raise UsageError(f"bad manifest {manifest_path}: {exc}") from None
    base = gt_dir if gt_dir is not None else manifest_path.parent
    faults = validate_submission(archive, manifest, cats, gt_base_dir=base)
    if not faults:
        print(f"OK: {len(manifest)} scene(s) validated")
        return EXIT_OK
    for fault in faults:
        print(str(fault), file=sys.stderr)
    print(f"{len(faults)} fault(s) in {archive}", file=sys.stderr)
    return EXIT_FAULTS


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        width=args.width,
        height=args.height,
        n_segments=args.segments,
        n_classes=args.classes,
        void_fraction=args.void_fraction,
        seed=args.seed,
        perturb_strength=args.strength,
        drop_segments=args.drop,
        split_segments=args.split,
        flip_segments=args.flip,
    )
    manifest_path = write_scene_tree(args.out, spec, args.scenes)
    print(f"wrote {args.scenes} scene(s) under {args.out} (manifest: {manifest_path})")
    return EXIT_OK


def cmd_oracle_check(n_cases: int, seed: int, max_side: int, max_segments: int) -> int:
    if n_cases == 0:
        print("warning: 0 cases requested, nothing checked", file=sys.stderr)
        return EXIT_OK
    ran, mismatches = run_differential(n_cases, seed, max_side=max_side, max_segments=max_segments)
    print(f"ran {ran} differential case(s): {len(mismatches)} mismatch(es)")
    for mismatch in mismatches:
        print(f"  seed {mismatch.spec.seed}: {mismatch.detail}", file=sys.stderr)
        print(f"    spec: {mismatch.spec}", file=sys.stderr)
    return EXIT_OK if not mismatches else EXIT_FAULTS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pqeval",
        description="Panoptic quality evaluation and weather-weighted challenge scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="score predictions against a manifest")
    p_eval.add_argument("--manifest", type=Path, required=True, help="scene manifest JSON")
    p_eval.add_argument("--pred", type=Path, required=True, help="prediction directory")
    p_eval.add_argument(
        "--gt", type=Path, default=None, help="base dir for relative gt paths (default: manifest dir)"
    )
    p_eval.add_argument("--categories", type=Path, default=None, help="category table JSON")
    p_eval.add_argument("--weights", type=Path, default=None, help="condition weights JSON")
    p_eval.add_argument(
        "--threads", type=int, default=None, help=f"worker threads (default 4 or ${THREADS_ENV})"
    )
    p_eval.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p_eval.add_argument("--out", type=Path, default=None, help="output file (default stdout)")

    p_rank = sub.add_parser("rank", help="rank score reports into a leaderboard")
    p_rank.add_argument("reports", type=Path, nargs="+", help="report JSON files")
    p_rank.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p_rank.add_argument("--out", type=Path, default=None)

    p_val = sub.add_parser("validate", help="check a submission archive against a manifest")
    p_val.add_argument("--archive", type=Path, required=True, help="submission directory or zip")
    p_val.add_argument("--manifest", type=Path, required=True)
    p_val.add_argument("--gt", type=Path, default=None)
    p_val.add_argument("--categories", type=Path, default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene tree")
    p_synth.add_argument("--out", type=Path, required=True, help="output directory")
    p_synth.add_argument("--scenes", type=int, default=8)
    p_synth.add_argument("--width", type=int, default=64)
    p_synth.add_argument("--height", type=int, default=64)
    p_synth.add_argument("--segments", type=int, default=4)
    p_synth.add_argument("--classes", type=int, default=6)
    p_synth.add_argument("--void-fraction", type=float, default=0.1)
    p_synth.add_argument("--strength", type=float, default=0.0, help="boundary erosion in [0, 1]")
    p_synth.add_argument("--drop", type=int, default=0, help="segments voided in the prediction")
    p_synth.add_argument("--split", type=int, default=0, help="segments cut in two")
    p_synth.add_argument("--flip", type=int, default=0, help="segments with class reassigned")
    p_synth.add_argument("--seed", type=int, default=0)

    p_oc = sub.add_parser("oracle-check", help="differential test fast path vs brute force")
    p_oc.add_argument("--cases", type=int, default=1000)
    p_oc.add_argument("--seed", type=int, default=0)
    p_oc.add_argument("--max-side", type=int, default=16)
    p_oc.add_argument("--max-segments", type=int, default=6)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "evaluate":
            threads = args.threads if args.threads is not None else _default_threads()
            config = RunConfig(
                manifest_path=args.manifest,
                pred_dir=args.pred,
                gt_dir=args.gt,
                categories_path=args.categories,
                weights_path=args.weights,
                threads=threads,
                output_path=args.out,
                format=args.format,
            )
            return cmd_evaluate(config)
        if args.command == "rank":
            return cmd_rank(args.reports, args.format, args.out)
        if args.command == "validate":
            return cmd_validate(args.archive, args.manifest, args.gt, args.categories)
        if args.command == "synth":
            if args.scenes < 0:
                raise UsageError(f"--scenes must be >= 0, got {args.scenes}")
            try:
                return cmd_synth(args)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        if args.command == "oracle-check":
            if args.cases < 0:
                raise UsageError(f"--cases must be >= 0, got {args.cases}")
            return cmd_oracle_check(args.cases, args.seed, args.max_side, args.max_segments)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvaluationError as exc:
        print("evaluation failed:", file=sys.stderr)
        for fault in exc.faults:
            print(f"  {fault}", file=sys.stderr)
        return EXIT_FAULTS
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
