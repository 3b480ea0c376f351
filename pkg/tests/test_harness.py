"""Submission intake, quota enforcement, persistence, leaderboard."""

from __future__ import annotations

import json
import shutil
import zipfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from pqeval import (
    ChallengeHarness,
    Phase,
    PhaseConfig,
    QuotaLedger,
    SubmissionRecord,
    SynthSpec,
    load_manifest,
    validate_submission,
)
from pqeval.oracle import write_scene_tree


@pytest.fixture(scope="module")
def tree(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("challenge_tree")
    spec = SynthSpec(width=12, height=10, n_segments=4, n_classes=4, void_fraction=0.1, seed=77)
    write_scene_tree(root, spec, 4)
    return root


@pytest.fixture(scope="module")
def manifest(tree):
    return load_manifest((tree / "manifest.json").read_text())


@pytest.fixture()
def degraded(tree, tmp_path) -> Path:
    """A valid but imperfect submission: one scene swapped for another's map."""
    out = tmp_path / "degraded"
    shutil.copytree(tree / "pred", out)
    for suffix in (".png", "_segments.json"):
        src = tree / "pred" / f"scene_0001{suffix}"
        (out / f"scene_0000{suffix}").write_bytes(src.read_bytes())
    return out


class TestPhaseConfig:
    def test_validation_phase_shape(self):
        cfg = PhaseConfig.validation()
        assert cfg.max_submissions_per_team == 100
        assert cfg.gt_visible is True

    def test_final_phase_shape(self):
        cfg = PhaseConfig.final()
        assert cfg.max_submissions_per_team == 5
        assert cfg.gt_visible is False

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            PhaseConfig(Phase.VALIDATION, 50, True)
        with pytest.raises(ValueError):
            PhaseConfig(Phase.VALIDATION, 100, False)
        with pytest.raises(ValueError):
            PhaseConfig(Phase.FINAL, 5, True)
        with pytest.raises(ValueError):
            PhaseConfig(Phase.FINAL, 6, False)

    def test_json_round_trip(self):
        cfg = PhaseConfig.final()
        assert PhaseConfig.from_json(cfg.to_json()) == cfg


class TestSubmissionRecord:
    def test_scored_needs_report(self):
        with pytest.raises(ValueError, match="report"):
            SubmissionRecord("t", Phase.FINAL, 1, "2026-01-01T00:00:00+00:00", "scored")

    def test_rejected_needs_reason_and_no_seq(self):
        with pytest.raises(ValueError, match="reason"):
            SubmissionRecord("t", Phase.FINAL, 0, "2026-01-01T00:00:00+00:00", "rejected")
        with pytest.raises(ValueError, match="sequence"):
            SubmissionRecord("t", Phase.FINAL, 2, "2026-01-01T00:00:00+00:00", "rejected", "bad")

    def test_unknown_status_rejected(self):
        with pytest.raises(ValueError, match="status"):
            SubmissionRecord("t", Phase.FINAL, 1, "2026-01-01T00:00:00+00:00", "pending")


class TestValidateSubmission:
    def test_well_formed_archive_ok(self, tree, manifest, cats):
        assert validate_submission(tree / "pred", manifest, cats, gt_base_dir=tree) == []

    def test_missing_scene_fault(self, tree, manifest, cats, tmp_path):
        out = tmp_path / "missing"
        shutil.copytree(tree / "pred", out)
        (out / "scene_0002.png").unlink()
        faults = validate_submission(out, manifest, cats, gt_base_dir=tree)
        assert any(f.scene_id == "scene_0002" and "missing prediction" in f.reason for f in faults)

    def test_unknown_category_fault(self, tree, manifest, cats, tmp_path):
        out = tmp_path / "badcat"
        shutil.copytree(tree / "pred", out)
        side = out / "scene_0001_segments.json"
        meta = json.loads(side.read_text())
        meta["segments"][0]["category_id"] = 99
        side.write_text(json.dumps(meta))
        faults = validate_submission(out, manifest, cats, gt_base_dir=tree)
        assert any(
            f.scene_id == "scene_0001" and "99" in f.reason for f in faults
        ), faults

    def test_extra_file_fault(self, tree, manifest, cats, tmp_path):
        out = tmp_path / "extra"
        shutil.copytree(tree / "pred", out)
        (out / "notes.txt").write_text("hello")
        faults = validate_submission(out, manifest, cats, gt_base_dir=tree)
        assert any("unexpected file" in f.reason and "notes.txt" in f.reason for f in faults)

    def test_dimension_mismatch_fault(self, tree, manifest, cats, tmp_path):
        from pqeval import write_label_map
        from pqeval.oracle import generate_scene

        out = tmp_path / "dims"
        shutil.copytree(tree / "pred", out)
        small, _, _ = generate_scene(SynthSpec(width=6, height=6, n_segments=2, seed=1))
        write_label_map(small, out / "scene_0003.png")
        faults = validate_submission(out, manifest, cats, gt_base_dir=tree)
        assert any(f.scene_id == "scene_0003" and "dimension" in f.reason for f in faults)

    def test_zip_archive_supported(self, tree, manifest, cats, tmp_path):
        zip_path = tmp_path / "sub.zip"
        with zipfile.ZipFile(zip_path, "w") as zf:
            for f in sorted((tree / "pred").iterdir()):
                zf.write(f, f.name)
        assert validate_submission(zip_path, manifest, cats, gt_base_dir=tree) == []

    def test_one_level_nesting_allowed(self, tree, manifest, cats, tmp_path):
        zip_path = tmp_path / "nested.zip"
        with zipfile.ZipFile(zip_path, "w") as zf:
            for f in sorted((tree / "pred").iterdir()):
                zf.write(f, f"results/{f.name}")
        assert validate_submission(zip_path, manifest, cats, gt_base_dir=tree) == []

    def test_unsafe_zip_member_rejected(self, tree, manifest, cats, tmp_path):
        zip_path = tmp_path / "evil.zip"
        with zipfile.ZipFile(zip_path, "w") as zf:
            zf.writestr("../escape.png", b"x")
        with pytest.raises(ValueError, match="unsafe"):
            validate_submission(zip_path, manifest, cats, gt_base_dir=tree)

    def test_unreadable_archive_raises(self, tree, manifest, cats, tmp_path):
        with pytest.raises(FileNotFoundError):
            validate_submission(tmp_path / "absent", manifest, cats, gt_base_dir=tree)


class TestSubmitAndQuota:
    def test_first_submission_scored_seq_1(self, tree, manifest, tmp_path):
        h = ChallengeHarness(
            tmp_path / "state", PhaseConfig.validation(), manifest, gt_base_dir=tree
        )
        record = h.submit("alpha", tree / "pred")
        assert record.status == "scored"
        assert record.sequence_no == 1
        assert record.report is not None and record.report.wpq == 100

    def test_rejection_does_not_consume_quota(self, tree, manifest, tmp_path):
        h = ChallengeHarness(
            tmp_path / "state", PhaseConfig.validation(), manifest, gt_base_dir=tree
        )
        bad = tmp_path / "bad"
        bad.mkdir()
        record = h.submit("alpha", bad)
        assert record.status == "rejected"
        assert record.sequence_no == 0
        assert h.submission_count("alpha") == 0
        good = h.submit("alpha", tree / "pred")
        assert good.sequence_no == 1

    def test_final_phase_sixth_submission_denied(self, tree, manifest, tmp_path):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.final(), manifest, gt_base_dir=tree)
        for i in range(5):
            assert h.submit("beta", tree / "pred").status == "scored"
        sixth = h.submit("beta", tree / "pred")
        assert sixth.status == "rejected"
        assert "5" in sixth.reason
        assert h.submission_count("beta") == 5

    def test_quotas_are_per_team(self, tree, manifest, tmp_path):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.final(), manifest, gt_base_dir=tree)
        for i in range(5):
            h.submit("gamma", tree / "pred")
        assert h.submit("delta", tree / "pred").status == "scored"

    def test_concurrent_submissions_respect_quota(self, tree, manifest, tmp_path):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.final(), manifest, gt_base_dir=tree)
        with ThreadPoolExecutor(max_workers=8) as pool:
            records = list(pool.map(lambda _: h.submit("race", tree / "pred"), range(12)))
        accepted = [r for r in records if r.status != "rejected"]
        rejected = [r for r in records if r.status == "rejected"]
        assert len(accepted) == 5
        assert len(rejected) == 7
        assert sorted(r.sequence_no for r in accepted) == [1, 2, 3, 4, 5]
        assert h.submission_count("race") == 5


class TestPersistence:
    def test_ledger_is_jsonl_with_required_keys(self, tree, manifest, tmp_path):
        root = tmp_path / "state"
        h = ChallengeHarness(root, PhaseConfig.validation(), manifest, gt_base_dir=tree)
        h.submit("alpha", tree / "pred")
        lines = (root / "ledger.jsonl").read_text().splitlines()
        assert len(lines) == 2  # submission + scored
        for line in lines:
            event = json.loads(line)
            assert {"event", "team", "phase", "seq", "ts", "status"} <= set(event)

    def test_replay_reconstructs_counts_and_board(self, tree, manifest, tmp_path, degraded):
        root = tmp_path / "state"
        h = ChallengeHarness(root, PhaseConfig.validation(), manifest, gt_base_dir=tree)
        h.submit("alpha", tree / "pred")
        h.submit("alpha", degraded)
        h.submit("bravo", degraded)
        board_before = h.leaderboard()

        again = ChallengeHarness.open(root, manifest, gt_base_dir=tree)
        assert again.submission_count("alpha") == 2
        assert again.submission_count("bravo") == 1
        assert again.leaderboard() == board_before

    def test_reopening_with_other_phase_rejected(self, tree, manifest, tmp_path):
        root = tmp_path / "state"
        ChallengeHarness(root, PhaseConfig.validation(), manifest, gt_base_dir=tree)
        with pytest.raises(ValueError, match="phase"):
            ChallengeHarness(root, PhaseConfig.final(), manifest, gt_base_dir=tree)

    def test_ledger_replay_counts(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        ledger = QuotaLedger(path)
        for seq in (1, 2):
            ledger.append(
                {
                    "event": "submission",
                    "team": "t",
                    "phase": "final",
                    "seq": seq,
                    "ts": "x",
                    "status": "accepted",
                }
            )
        ledger.append(
            {"event": "submission", "team": "t", "phase": "final", "seq": 0, "ts": "x", "status": "rejected"}
        )
        replayed = QuotaLedger(path)
        assert replayed.count("t", Phase.FINAL) == 2
        assert len(replayed.events) == 3


class TestLeaderboard:
    def test_empty_board(self, tree, manifest, tmp_path):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.validation(), manifest, gt_base_dir=tree)
        assert h.leaderboard() == []

    def test_best_of_team_selected(self, tree, manifest, tmp_path, degraded):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.validation(), manifest, gt_base_dir=tree)
        scores = [
            float(h.submit("alpha", degraded).report.wpq),
            float(h.submit("alpha", tree / "pred").report.wpq),
            float(h.submit("alpha", degraded).report.wpq),
        ]
        board = h.leaderboard()
        assert len(board) == 1
        assert float(board[0].wpq) == max(scores) == 100.0

    def test_ranking_across_teams(self, tree, manifest, tmp_path, degraded):
        h = ChallengeHarness(tmp_path / "state", PhaseConfig.validation(), manifest, gt_base_dir=tree)
        h.submit("weak", degraded)
        h.submit("strong", tree / "pred")
        board = h.leaderboard()
        assert [r.team for r in board] == ["strong", "weak"]
        assert [r.rank for r in board] == [1, 2]


class TestGtIsolation:
    def test_final_phase_outputs_hold_scores_only(self, tree, manifest, tmp_path):
        root = tmp_path / "state"
        h = ChallengeHarness(root, PhaseConfig.final(), manifest, gt_base_dir=tree)
        h.submit("sealed", tree / "pred")
        # no pixel data anywhere under the state root
        files = [p for p in root.rglob("*") if p.is_file()]
        assert all(p.suffix != ".png" for p in files)
        for report_file in (root / "reports").glob("*.json"):
            payload = json.loads(report_file.read_text())
            assert "ids" not in json.dumps(payload)
            top_level = set(payload)
            assert "per_condition" in top_level
            # nothing references the ground-truth location
            assert str(tree) not in json.dumps(payload)
