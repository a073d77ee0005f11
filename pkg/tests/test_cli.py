import csv
import json
import os

import numpy as np
import pytest

from winovis.bundle_io import (
    read_bundle_file,
    write_bundle_file,
    write_instances,
    write_stack_file,
)
from winovis.attribution import AttentionSlice, AttentionStack, aggregate_all
from winovis.cli import main
from winovis.corpus import WinoVisInstance
from winovis.fixtures import synth_suite, write_suite

from reference import reference_bicubic


@pytest.fixture
def suite_dir(tmp_path):
    specs = synth_suite(50, seed=42)
    expected = write_suite(tmp_path / "suite", specs)
    return tmp_path / "suite", expected


def read_verdict_rows(path):
    with open(path, newline="") as fh:
        return {row["instance_id"]: row for row in csv.DictReader(fh)}


class TestEvaluate:
    def test_fixture_batch_matches_expected(self, suite_dir, tmp_path, capsys):
        suite, expected = suite_dir
        out = tmp_path / "out"
        code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(out)])
        assert code == 0
        rows = read_verdict_rows(out / "verdicts.csv")
        assert len(rows) == 50
        for iid, verdict in expected.items():
            assert rows[iid]["status"] == verdict.status.value
        report = json.loads((out / "report.json").read_text())
        assert report["counts"]["total"] == 50

    def test_empty_bundle_dir_partial(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        empty = tmp_path / "nothing"
        empty.mkdir()
        out = tmp_path / "out"
        code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(empty), "--out", str(out)])
        assert code == 2
        report = json.loads((out / "report.json").read_text())
        assert report["counts"]["total"] == 0
        rows = read_verdict_rows(out / "verdicts.csv")
        assert all(row["error"] == "missing bundle" for row in rows.values())

    def test_bad_config_path(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(tmp_path / "o"),
                     "--config", str(tmp_path / "missing.json")])
        assert code == 1

    def test_unreadable_instances(self, tmp_path):
        code = main(["evaluate", "--instances", str(tmp_path / "nope.jsonl"),
                     "--bundles", str(tmp_path), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_jobs_do_not_change_output(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        outs = []
        for jobs in ("1", "4"):
            out = tmp_path / f"out{jobs}"
            code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                         "--bundles", str(suite / "bundles"), "--out", str(out),
                         "--jobs", jobs])
            assert code == 0
            outs.append(((out / "verdicts.csv").read_bytes(),
                         (out / "report.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_format_subset(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        out = tmp_path / "out"
        main(["evaluate", "--instances", str(suite / "instances.jsonl"),
              "--bundles", str(suite / "bundles"), "--out", str(out),
              "--format", "csv"])
        assert (out / "verdicts.csv").exists()
        assert not (out / "report.json").exists()

    def test_caption_labels_override(self, suite_dir, tmp_path):
        suite, expected = suite_dir
        labels = tmp_path / "flags.csv"
        target = "fx-0000"  # a correct scenario; flag flips it to captioned
        labels.write_text(f"instance_id,captioned\n{target},1\n")
        out = tmp_path / "out"
        code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(out),
                     "--labels", str(labels)])
        assert code == 0
        rows = read_verdict_rows(out / "verdicts.csv")
        assert rows[target]["status"] == "captioned"

    def test_dry_run_writes_nothing(self, suite_dir, tmp_path, capsys):
        suite, _ = suite_dir
        out = tmp_path / "out"
        code = main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(out), "--dry-run"])
        assert code == 0
        assert not out.exists()
        assert "dry-run: evaluate" in capsys.readouterr().out

    def test_config_file_with_flag_override(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        out = tmp_path / "out"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "instances": str(suite / "instances.jsonl"),
            "bundles": str(suite / "bundles"),
            "out": "IGNORED",
            "decision-threshold": 0.4,
        }))
        code = main(["evaluate", "--config", str(cfg), "--instances",
                     str(suite / "instances.jsonl"), "--bundles", str(suite / "bundles"),
                     "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_unknown_config_key(self, suite_dir, tmp_path):
        suite, _ = suite_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code = main(["evaluate", "--config", str(cfg),
                     "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(tmp_path / "o")])
        assert code == 1


def stack_fixture(tmp_path, iid="wv-abc"):
    rng = np.random.default_rng(5)
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    slices = [
        AttentionSlice("down", t, l, h, f32(rng.random((3, 8, 8))))
        for t in range(2) for l in range(1) for h in range(2)
    ] + [AttentionSlice("up", 0, 0, 0, f32(rng.random((3, 16, 16))))]
    stack = AttentionStack(("owl", "crate", "it"), slices)
    stacks = tmp_path / "stacks"
    stacks.mkdir(exist_ok=True)
    write_stack_file(stacks / f"{iid}.wvas", iid, stack)
    inst = WinoVisInstance(
        id=iid, statement="The owl guarded the crate because it was shiny.",
        pronoun="it", snippet="it was shiny", options=("owl", "crate"),
        answer=1, reason="")
    write_instances(tmp_path / "instances.jsonl", [inst])
    return stacks, stack


class TestAggregate:
    def test_matches_bruteforce_oracle(self, tmp_path):
        stacks, stack = stack_fixture(tmp_path)
        out = tmp_path / "bundles"
        code = main(["aggregate", "--stacks", str(stacks),
                     "--instances", str(tmp_path / "instances.jsonl"),
                     "--out", str(out), "--width", "16", "--height", "16"])
        assert code == 0
        bundle = read_bundle_file(out / "wv-abc.wvhm")
        assert bundle.roles == {"owl": "entity1", "crate": "entity2", "it": "pronoun"}
        for k in range(3):
            want = np.zeros((16, 16))
            for s in stack.slices:
                want += reference_bicubic(s.scores[k], 16, 16)
            # on-disk values are float32 quantized
            assert np.max(np.abs(bundle.heatmaps[k].data - want)) < 1e-4

    def test_empty_input_dir(self, tmp_path):
        stacks = tmp_path / "stacks"
        stacks.mkdir()
        write_instances(tmp_path / "instances.jsonl", [])
        code = main(["aggregate", "--stacks", str(stacks),
                     "--instances", str(tmp_path / "instances.jsonl"),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_corrupt_stack_skipped_others_processed(self, tmp_path, capsys):
        stacks, _ = stack_fixture(tmp_path)
        (stacks / "bad.wvas").write_bytes(b"WVASgarbage")
        out = tmp_path / "bundles"
        code = main(["aggregate", "--stacks", str(stacks),
                     "--instances", str(tmp_path / "instances.jsonl"),
                     "--out", str(out), "--width", "16", "--height", "16"])
        assert code == 2
        assert (out / "wv-abc.wvhm").exists()
        assert "bad.wvas" in capsys.readouterr().err

    def test_default_dims_use_finest_slice(self, tmp_path):
        stacks, stack = stack_fixture(tmp_path)
        out = tmp_path / "bundles"
        code = main(["aggregate", "--stacks", str(stacks),
                     "--instances", str(tmp_path / "instances.jsonl"), "--out", str(out)])
        assert code == 0
        bundle = read_bundle_file(out / "wv-abc.wvhm")
        assert (bundle.width, bundle.height) == (16, 16)


class TestCalibrate:
    def test_synthetic_labels_select_040(self, tmp_path):
        rows = ["instance_id,iou_value,human_positive"]
        rows += [f"p{k},{v},1" for k, v in enumerate(np.linspace(0.46, 0.89, 25))]
        rows += [f"n{k},{v},0" for k, v in enumerate(np.linspace(0.01, 0.34, 25))]
        labels = tmp_path / "cal.csv"
        labels.write_text("\n".join(rows) + "\n")
        out = tmp_path / "out"
        code = main(["calibrate", "--labels", str(labels), "--out", str(out)])
        assert code == 0
        curve = {}
        with open(out / "agreement_curve.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                curve[float(row["threshold"])] = float(row["agreement"])
        assert curve[0.4] == 1.0
        assert max(curve.values()) == 1.0
        chosen = json.loads((out / "selected_threshold.json").read_text())["threshold"]
        assert chosen == 0.35  # smallest full-agreement grid point

    def test_empty_labels_error(self, tmp_path):
        labels = tmp_path / "cal.csv"
        labels.write_text("instance_id,iou_value,human_positive\n")
        code = main(["calibrate", "--labels", str(labels), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_single_label(self, tmp_path):
        labels = tmp_path / "cal.csv"
        labels.write_text("instance_id,iou_value,human_positive\na,0.5,0\n")
        out = tmp_path / "out"
        code = main(["calibrate", "--labels", str(labels), "--out", str(out)])
        assert code == 0
        assert (out / "agreement_curve.csv").exists()


def mock_transcript(tmp_path, n=10):
    objs = []
    words = ["falcon", "garden", "hammer", "island", "jacket", "kitten", "ladder",
             "magnet", "needle", "orchid", "puzzle", "quiver", "rocket", "saddle",
             "teapot", "urchin", "velvet", "wagon", "yarn", "zipper"]
    for k in range(n):
        a, b = words[2 * k % len(words)], words[(2 * k + 1) % len(words)]
        objs.append(json.dumps({
            "statement": f"The {a} number {k} struck the {b} because it was ready.",
            "pronoun": "it", "snippet": "it was ready", "options": [a, b],
            "answer": k % 2, "reason": "because",
        }))
    path = tmp_path / "transcript.json"
    path.write_text(json.dumps(["\n".join(objs)]))
    return path


class TestGenerateCorpus:
    def test_deterministic_candidate_file(self, tmp_path):
        transcript = mock_transcript(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["generate-corpus", "--out", str(out), "--target", "10",
                         "--mock-transcript", str(transcript)])
            assert code == 0
            outs.append((out / "candidates.jsonl").read_bytes())
        assert outs[0] == outs[1]
        audit = json.loads((tmp_path / "a" / "audit.json").read_text())
        assert audit["completed"] is True
        assert len(audit["requests"]) == 1

    def test_cap_reached_is_partial(self, tmp_path):
        transcript = mock_transcript(tmp_path, n=3)
        out = tmp_path / "out"
        code = main(["generate-corpus", "--out", str(out), "--target", "10",
                     "--request-cap", "1", "--mock-transcript", str(transcript)])
        assert code == 2
        assert len((out / "candidates.jsonl").read_text().splitlines()) == 3

    def test_requires_endpoint_or_transcript(self, tmp_path):
        assert main(["generate-corpus", "--out", str(tmp_path / "o")]) == 1


class TestValidateCorpus:
    def test_valid_corpus_exit_zero(self, suite_dir):
        suite, _ = suite_dir
        assert main(["validate-corpus", "--instances", str(suite / "instances.jsonl")]) == 0

    def test_invalid_instance_listed(self, tmp_path, capsys):
        bad = WinoVisInstance(id="x", statement="The cat sat.", pronoun="he",
                              snippet="not present", options=("cat", "cat"),
                              answer=5, reason="")
        write_instances(tmp_path / "instances.jsonl", [bad])
        code = main(["validate-corpus", "--instances", str(tmp_path / "instances.jsonl")])
        assert code == 1
        err = capsys.readouterr().err
        assert "snippet-not-in-statement" in err
        assert "options-not-distinct" in err
        assert "bad-answer" in err


class TestSynthFixturesCommand:
    def test_seeded_runs_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            code = main(["synth-fixtures", "--out", str(tmp_path / name),
                         "--count", "12", "--seed", "42"])
            assert code == 0
        for rel in ["instances.jsonl", "expected.csv"] + \
                [f"bundles/fx-{k:04d}.wvhm" for k in range(12)]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_count_zero(self, tmp_path):
        code = main(["synth-fixtures", "--out", str(tmp_path / "o"), "--count", "0"])
        assert code == 0
        assert (tmp_path / "o" / "expected.csv").read_text().strip() == \
            "instance_id,expected_status"

    def test_sidecar_consistent_with_evaluate(self, tmp_path):
        out = tmp_path / "suite"
        assert main(["synth-fixtures", "--out", str(out), "--count", "16",
                     "--seed", "7"]) == 0
        run = tmp_path / "run"
        assert main(["evaluate", "--instances", str(out / "instances.jsonl"),
                     "--bundles", str(out / "bundles"), "--out", str(run)]) == 0
        rows = read_verdict_rows(run / "verdicts.csv")
        with open(out / "expected.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                assert rows[row["instance_id"]]["status"] == row["expected_status"]


class TestParserBasics:
    def test_every_command_has_dry_run(self, tmp_path, capsys):
        assert main(["synth-fixtures", "--out", str(tmp_path / "x"), "--dry-run"]) == 0
        assert "dry-run: synth-fixtures" in capsys.readouterr().out
        assert not (tmp_path / "x").exists()
