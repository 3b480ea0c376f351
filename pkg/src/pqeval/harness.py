"""Challenge operations: submission intake, quotas, history, leaderboard.

State lives in an append-only JSON-lines event log plus one report file per
scored submission, so a crashed harness is reconstructed exactly by
replaying the log. Admission (quota check, validation, accepted-event
append) is serialized under one lock; scoring runs outside it, so several
admitted submissions may be scored concurrently without ever letting a
team's accepted count pass the phase quota.
"""

from __future__ import annotations

import hashlib
import json
import re
import tempfile
import threading
import zipfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

from PIL import Image

from .conditions import WeightConfig
from .labelio import CategoryTable, SceneManifest, decode_label_map, sidecar_path
from .metrics import (
    LeaderboardRow,
    ScoreReport,
    rank_submissions,
    report_from_json,
    report_to_json,
)
from .runner import EvaluationError, SceneFault, evaluate_manifest, resolve_gt_path


class Phase(str, Enum):
    VALIDATION = "validation"
    FINAL = "final"


VALIDATION_QUOTA = 100
FINAL_QUOTA = 5


@dataclass(frozen=True)
class PhaseConfig:
    """Per-phase rules: submission quota and ground-truth visibility."""

    phase: Phase
    max_submissions_per_team: int
    gt_visible: bool
    duration_note: str = ""

    def __post_init__(self) -> None:
        expected = {
            Phase.VALIDATION: (VALIDATION_QUOTA, True),
            Phase.FINAL: (FINAL_QUOTA, False),
        }[self.phase]
        if (self.max_submissions_per_team, self.gt_visible) != expected:
            raise ValueError(
                f"{self.phase.value} phase requires quota {expected[0]} and "
                f"gt_visible={expected[1]}"
            )

    @classmethod
    def validation(cls, duration_note: str = "open for about one month") -> "PhaseConfig":
        return cls(Phase.VALIDATION, VALIDATION_QUOTA, True, duration_note)

    @classmethod
    def final(cls, duration_note: str = "open for six days") -> "PhaseConfig":
        return cls(Phase.FINAL, FINAL_QUOTA, False, duration_note)

    def to_json(self) -> str:
        payload = {
            "phase": self.phase.value,
            "max_submissions_per_team": self.max_submissions_per_team,
            "gt_visible": self.gt_visible,
            "duration_note": self.duration_note,
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, raw: bytes | str) -> "PhaseConfig":
        payload = json.loads(raw)
        return cls(
            phase=Phase(payload["phase"]),
            max_submissions_per_team=int(payload["max_submissions_per_team"]),
            gt_visible=bool(payload["gt_visible"]),
            duration_note=str(payload.get("duration_note", "")),
        )


@dataclass(frozen=True)
class SubmissionRecord:
    """Outcome of one submit() call.

    ``sequence_no`` is the 1-based accepted ordinal within (team, phase);
    rejected submissions carry 0 because they consume no quota.
    """

    team: str
    phase: Phase
    sequence_no: int
    timestamp: str
    status: str  # accepted | rejected | scored
    reason: str | None = None
    report: ScoreReport | None = None

    def __post_init__(self) -> None:
        if self.status not in ("accepted", "rejected", "scored"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "rejected":
            if self.sequence_no != 0:
                raise ValueError("rejected submissions do not hold a sequence number")
            if not self.reason:
                raise ValueError("rejected submissions must carry a reason")
        else:
            if self.sequence_no < 1:
                raise ValueError("accepted submissions are numbered from 1")
        if self.status == "scored" and self.report is None:
            raise ValueError("scored submissions must carry a report")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class QuotaLedger:
    """Append-only event log with replayable per-(team, phase) counts.

    Events are JSON objects, one per line: ``event`` is ``submission`` (an
    admission decision, status ``accepted`` or ``rejected``) or ``scored``
    (scoring finished; carries the report path). Counts are derived purely
    from accepted submission events, so replay equals live state.
    """

    def __init__(self, path: Path):
        self.path = path
        self._counts: dict[tuple[str, str], int] = {}
        self._events: list[dict] = []
        if path.is_file():
            for line_no, line in enumerate(path.read_text().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{line_no}: bad ledger line: {exc}") from exc
                self._apply(event)

    def _apply(self, event: dict) -> None:
        self._events.append(event)
        if event.get("event") == "submission" and event.get("status") == "accepted":
            key = (event["team"], event["phase"])
            self._counts[key] = self._counts.get(key, 0) + 1

    def append(self, event: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._apply(event)

    def count(self, team: str, phase: Phase) -> int:
        return self._counts.get((team, phase.value), 0)

    @property
    def events(self) -> tuple[dict, ...]:
        return tuple(self._events)

    def scored_submissions(self, phase: Phase) -> list[dict]:
        """Latest scored event per (team, seq) for one phase."""
        latest: dict[tuple[str, int], dict] = {}
        for event in self._events:
            if event.get("event") == "scored" and event.get("phase") == phase.value:
                latest[(event["team"], int(event["seq"]))] = event
        return [latest[key] for key in sorted(latest)]


@contextmanager
def materialize_archive(archive: Path) -> Iterator[Path]:
    """Yield a directory view of a submission (a directory or a zip file)."""
    if archive.is_dir():
        yield archive
        return
    if archive.is_file() and zipfile.is_zipfile(archive):
        with zipfile.ZipFile(archive) as zf:
            for name in zf.namelist():
                clean = Path(name)
                if clean.is_absolute() or ".." in clean.parts:
                    raise ValueError(f"unsafe member path {name!r} in archive")
            with tempfile.TemporaryDirectory(prefix="pqeval_sub_") as tmp:
                zf.extractall(tmp)
                yield Path(tmp)
        return
    raise FileNotFoundError(f"archive {archive} is neither a directory nor a zip file")


def _index_archive(root: Path) -> tuple[dict[str, list[Path]], list[Path]]:
    """Map file name -> paths at the root or one level down; rest are strays."""
    named: dict[str, list[Path]] = {}
    strays: list[Path] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        depth = len(path.relative_to(root).parts)
        if depth <= 2:
            named.setdefault(path.name, []).append(path)
        else:
            strays.append(path)
    return named, strays


def validate_submission(
    archive: Path,
    manifest: Sequence[SceneManifest],
    cats: CategoryTable,
    gt_base_dir: Path | None = None,
) -> list[SceneFault]:
    """Check a submission archive against the manifest; [] means OK.

    Checks: every scene has exactly one prediction PNG and sidecar, nothing
    extra is included, every label map decodes under the taxonomy, and its
    size matches the ground-truth image.
    """
    faults: list[SceneFault] = []
    with materialize_archive(archive) as root:
        named, strays = _index_archive(root)
        for stray in strays:
            faults.append(SceneFault(None, f"unexpected file {stray.relative_to(root)}"))

        expected = set()
        for scene in manifest:
            expected.add(f"{scene.scene_id}.png")
            expected.add(f"{scene.scene_id}_segments.json")
        for name, paths in sorted(named.items()):
            if name not in expected:
                faults.append(SceneFault(None, f"unexpected file {paths[0].relative_to(root)}"))
            elif len(paths) > 1:
                scene_id = name.removesuffix("_segments.json").removesuffix(".png")
                faults.append(SceneFault(scene_id, f"file {name} appears {len(paths)} times"))

        for scene in manifest:
            png = named.get(f"{scene.scene_id}.png", [])
            side = named.get(f"{scene.scene_id}_segments.json", [])
            if not png:
                faults.append(SceneFault(scene.scene_id, "missing prediction"))
                continue
            if not side:
                faults.append(SceneFault(scene.scene_id, "missing segment sidecar"))
                continue
            if len(png) > 1 or len(side) > 1:
                continue  # duplicate fault already recorded
            try:
                pred = decode_label_map(png[0].read_bytes(), side[0].read_bytes(), cats)
            except ValueError as exc:
                faults.append(SceneFault(scene.scene_id, str(exc)))
                continue
            gt_png = resolve_gt_path(scene, gt_base_dir)
            if not gt_png.is_file():
                raise FileNotFoundError(f"ground truth for {scene.scene_id} not found: {gt_png}")
            with Image.open(gt_png) as img:
                gt_size = img.size
            if (pred.width, pred.height) != gt_size:
                faults.append(
                    SceneFault(
                        scene.scene_id,
                        f"dimension mismatch: prediction {pred.width}x{pred.height}, "
                        f"ground truth {gt_size[0]}x{gt_size[1]}",
                    )
                )
    return sorted(faults, key=lambda f: (f.scene_id or "", f.reason))


def _safe_team_slug(team: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]+", "_", team) or "team"
    digest = hashlib.sha1(team.encode()).hexdigest()[:8]
    return f"{safe}-{digest}"


class ChallengeHarness:
    """One challenge phase rooted in a state directory.

    Layout: ``phase.json`` (configuration), ``ledger.jsonl`` (event log),
    ``reports/`` (one score file per scored submission). Ground truth stays
    under the caller-supplied base directory, never inside the state root,
    and reports carry scores only, so the withheld final-phase ground truth
    is never exposed through harness output.
    """

    def __init__(
        self,
        root: Path,
        phase: PhaseConfig,
        manifest: Sequence[SceneManifest],
        gt_base_dir: Path | None = None,
        cats: CategoryTable | None = None,
        weights: WeightConfig | None = None,
        threads: int = 1,
    ):
        self.root = Path(root)
        self.phase = phase
        self.manifest = list(manifest)
        self.gt_base_dir = gt_base_dir
        self.cats = cats or CategoryTable.default()
        self.weights = weights or WeightConfig.default()
        self.threads = threads
        self.root.mkdir(parents=True, exist_ok=True)
        self.reports_dir = self.root / "reports"
        self.reports_dir.mkdir(exist_ok=True)
        phase_file = self.root / "phase.json"
        if phase_file.is_file():
            on_disk = PhaseConfig.from_json(phase_file.read_text())
            if on_disk != phase:
                raise ValueError(
                    f"state root {root} belongs to phase {on_disk.phase.value!r}, "
                    f"not {phase.phase.value!r}"
                )
        else:
            phase_file.write_text(phase.to_json())
        self.ledger = QuotaLedger(self.root / "ledger.jsonl")
        self._admission = threading.Lock()

    @classmethod
    def open(
        cls,
        root: Path,
        manifest: Sequence[SceneManifest],
        gt_base_dir: Path | None = None,
        cats: CategoryTable | None = None,
        weights: WeightConfig | None = None,
        threads: int = 1,
    ) -> "ChallengeHarness":
        """Reopen an existing state root, reading the phase from disk."""
        phase_file = Path(root) / "phase.json"
        if not phase_file.is_file():
            raise FileNotFoundError(f"no phase.json under {root}")
        phase = PhaseConfig.from_json(phase_file.read_text())
        return cls(root, phase, manifest, gt_base_dir, cats, weights, threads)

    def submit(self, team: str, archive: Path) -> SubmissionRecord:
        """Admit, validate, and score one submission.

        The quota is checked before anything else; a team at its limit is
        denied without the archive even being opened. Validation failures
        are rejected and do not consume quota. Only the admission block is
        serialized; scoring runs outside the lock.
        """
        if not team:
            raise ValueError("team name must be nonempty")
        quota = self.phase.max_submissions_per_team
        with self._admission:
            used = self.ledger.count(team, self.phase.phase)
            if used >= quota:
                reason = (
                    f"submission limit reached: at most {quota} submissions per team "
                    f"in the {self.phase.phase.value} phase"
                )
                record = SubmissionRecord(team, self.phase.phase, 0, _utc_now(), "rejected", reason)
                self._log_submission(record)
                return record
            faults = validate_submission(archive, self.manifest, self.cats, self.gt_base_dir)
            if faults:
                shown = "; ".join(str(f) for f in faults[:5])
                extra = f" (+{len(faults) - 5} more)" if len(faults) > 5 else ""
                reason = f"validation failed: {shown}{extra}"
                record = SubmissionRecord(team, self.phase.phase, 0, _utc_now(), "rejected", reason)
                self._log_submission(record)
                return record
            seq = used + 1
            accepted = SubmissionRecord(team, self.phase.phase, seq, _utc_now(), "accepted")
            self._log_submission(accepted)

        with materialize_archive(archive) as pred_root:
            try:
                report = evaluate_manifest(
                    self.manifest,
                    pred_root,
                    gt_base_dir=self.gt_base_dir,
                    cats=self.cats,
                    weights=self.weights,
                    threads=self.threads,
                    team=team,
                )
            except EvaluationError:
                # validation decodes every scene, so this indicates harness
                # misconfiguration (for example missing ground truth), not a
                # team error; the accepted event stands and the error surfaces
                raise
        report_name = f"{_safe_team_slug(team)}_{self.phase.phase.value}_{seq:03d}.json"
        (self.reports_dir / report_name).write_text(report_to_json(report))
        self.ledger.append(
            {
                "event": "scored",
                "team": team,
                "phase": self.phase.phase.value,
                "seq": seq,
                "ts": _utc_now(),
                "status": "scored",
                "report": f"reports/{report_name}",
            }
        )
        return SubmissionRecord(team, self.phase.phase, seq, accepted.timestamp, "scored", None, report)

    def _log_submission(self, record: SubmissionRecord) -> None:
        event = {
            "event": "submission",
            "team": record.team,
            "phase": record.phase.value,
            "seq": record.sequence_no,
            "ts": record.timestamp,
            "status": record.status,
        }
        if record.reason:
            event["reason"] = record.reason
        self.ledger.append(event)

    def submission_count(self, team: str) -> int:
        return self.ledger.count(team, self.phase.phase)

    def _best_reports(self) -> list[tuple[str, ScoreReport]]:
        best: dict[str, tuple] = {}
        for event in self.ledger.scored_submissions(self.phase.phase):
            report_path = self.root / event["report"]
            report = report_from_json(report_path.read_text())
            team = event["team"]
            seq = int(event["seq"])
            # highest wpq wins; the earlier submission wins an exact tie
            key = (report.wpq, -seq)
            if team not in best or key > best[team][0]:
                best[team] = (key, report)
        return [(team, entry[1]) for team, entry in sorted(best.items())]

    def leaderboard(self) -> list[LeaderboardRow]:
        """Best scored submission per team, ranked; empty when none scored."""
        entries = self._best_reports()
        if not entries:
            return []
        return rank_submissions(entries)
