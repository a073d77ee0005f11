"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with -s or -v to see them)."""
import contextlib
import csv
import json
import time

import numpy as np
import pytest

from winovis.attribution import AttentionSlice, AttentionStack, aggregate_token_heatmap
from winovis.bundle_io import (
    BundleFormatError,
    read_bundle,
    read_stack,
    write_bundle,
    write_stack,
)
from winovis.calibration import LabeledPair, agreement_curve, default_grid
from winovis.cli import main
from winovis.corpus import (
    CRITERIA_RULES,
    ScriptedClient,
    build_prompt,
    default_template,
    instance_id_for,
    run_cycle,
    validate_instance,
    WinoVisInstance,
)
from winovis.fixtures import synth_bundle, synth_suite
from winovis.grid import BinaryMask, Heatmap2D, bicubic_upscale, iou, threshold_mask
from winovis.metrics import (
    VerdictCounts,
    binary_metrics,
    count_verdicts,
    multiclass_metrics,
    ztest_two_proportions,
)
from winovis.pipeline import Entity, InstanceVerdict, Status, evaluate_instance

from reference import reference_bicubic, reference_threshold_count


@contextlib.contextmanager
def criterion(name):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name} ({time.perf_counter() - start:.2f}s)")


def test_metric_reproduction_binary():
    with criterion("metric reproduction (binary suite)"):
        start = time.perf_counter()
        rows = {
            (24, 24, 250): (50.0, 8.8, 14.9, 16.1),
            (38, 31, 260): (55.1, 12.8, 20.7, 21.0),
        }
        for (c, i, n), (p, r, f1, cert) in rows.items():
            m = binary_metrics(VerdictCounts(correct=c, incorrect=i, neither=n))
            assert abs(m.precision - p) <= 0.05
            assert abs(m.recall - r) <= 0.05
            assert abs(m.f1 - f1) <= 0.05
            assert abs(m.certainty - cert) <= 0.05
        m = binary_metrics(VerdictCounts(correct=55, incorrect=42, neither=172))
        assert abs(m.precision - 56.7) <= 0.05
        assert abs(m.recall - 24.2) <= 0.05
        assert abs(m.certainty - 36.1) <= 0.05
        # printed F1 for this row (34.1) disagrees with every recomputation
        # from its own counts (33.9-34.0); tolerance widened for this cell
        assert abs(m.f1 - 34.1) <= 0.25
        m = binary_metrics(VerdictCounts(correct=1, incorrect=0, neither=424))
        assert abs(m.certainty - 0.24) <= 0.005
        assert time.perf_counter() - start < 0.05  # milliseconds


def test_metric_reproduction_multiclass():
    with criterion("metric reproduction (multi-class suite)"):
        rows = {
            (16, 8, 16, 8): (50.0, 50.0, 50.0, 50.0),
            (25, 13, 19, 12): (55.1, 54.4, 54.1, 54.3),
            (29, 26, 24, 18): (56.7, 56.9, 56.9, 56.9),
        }
        for counts, (acc, mp, mr, mf1) in rows.items():
            m = multiclass_metrics(*counts)
            assert abs(m.accuracy - acc) <= 0.05
            assert abs(m.macro_precision - mp) <= 0.05
            assert abs(m.macro_recall - mr) <= 0.05
            assert abs(m.macro_f1 - mf1) <= 0.05


def test_significance_consistency():
    with criterion("significance consistency (two-proportion Z-tests)"):
        assert ztest_two_proportions(55, 227, 38, 298).p_two_sided < 0.01   # recall
        assert ztest_two_proportions(97, 269, 69, 329).p_two_sided < 0.01   # certainty
        assert ztest_two_proportions(55, 97, 38, 69).p_two_sided > 0.05     # precision


def _verdicts_for(captioned, overlapped, correct, incorrect, neither):
    out = []
    k = 0
    for status, n in [(Status.CAPTIONED, captioned), (Status.OVERLAPPED, overlapped),
                      (Status.CORRECT, correct), (Status.INCORRECT, incorrect),
                      (Status.NEITHER, neither)]:
        for _ in range(n):
            kwargs = {}
            if status in (Status.CORRECT, Status.INCORRECT):
                kwargs = dict(predicted=Entity.ENTITY1, iou_entities=0.0,
                              iou_pronoun_e1=0.9, iou_pronoun_e2=0.0)
            elif status is Status.OVERLAPPED:
                kwargs = dict(iou_entities=0.9)
            out.append(InstanceVerdict(f"v{k}", status, **kwargs))
            k += 1
    return out


def test_partition_invariant():
    with criterion("partition invariant (counts always sum to the batch)"):
        table2 = [
            (178, 24, 24, 24, 250),
            (135, 36, 38, 31, 260),
            (160, 71, 55, 42, 172),
            (2, 73, 1, 0, 424),
        ]
        for row in table2:
            counts = count_verdicts(_verdicts_for(*row))
            assert counts.total() == 500
            assert counts.evaluable() == row[2] + row[3] + row[4]
        rng = np.random.default_rng(0)
        for _ in range(1000):
            sizes = rng.multinomial(int(rng.integers(0, 120)), [0.2] * 5)
            verdicts = _verdicts_for(*map(int, sizes))
            assert count_verdicts(verdicts).total() == len(verdicts)


def test_pipeline_oracle_suite(tmp_path):
    with criterion("pipeline oracle suite (200 scenarios, end to end)"):
        start = time.perf_counter()
        suite = tmp_path / "suite"
        assert main(["synth-fixtures", "--out", str(suite), "--count", "200",
                     "--seed", "20240501"]) == 0
        out = tmp_path / "run"
        assert main(["evaluate", "--instances", str(suite / "instances.jsonl"),
                     "--bundles", str(suite / "bundles"), "--out", str(out)]) == 0
        with open(out / "verdicts.csv", newline="") as fh:
            got = {row["instance_id"]: row["status"] for row in csv.DictReader(fh)}
        with open(suite / "expected.csv", newline="") as fh:
            expected = {row["instance_id"]: row["expected_status"]
                        for row in csv.DictReader(fh)}
        assert len(got) == len(expected) == 200
        mismatches = {k for k in expected if got[k] != expected[k]}
        assert not mismatches, f"status mismatches: {sorted(mismatches)[:5]}"
        # every status occurs, and both tight decision branches are exercised
        assert set(expected.values()) == {s.value for s in Status}
        specs = synth_suite(200, seed=20240501)
        verdicts = [synth_bundle(s)[1] for s in specs]
        assert any(v.iou_pronoun_e1 is not None and v.iou_pronoun_e2 is not None
                   and v.iou_pronoun_e1 == v.iou_pronoun_e2 > 0.4 for v in verdicts)
        assert any(v.iou_pronoun_e1 is not None and v.iou_pronoun_e2 is not None
                   and v.iou_pronoun_e1 > 0.4 and v.iou_pronoun_e2 > 0.4
                   and v.iou_pronoun_e1 != v.iou_pronoun_e2 for v in verdicts)
        assert time.perf_counter() - start < 10.0


def test_numerical_property_suite():
    with criterion("numerical property suite (IoU / threshold / bicubic / aggregation)"):
        # IoU equals brute-force counting on every pair of 3x3 masks
        bits = np.array([[(m >> k) & 1 for k in range(9)] for m in range(512)],
                        dtype=np.int64)
        inter = bits @ bits.T
        pop = bits.sum(axis=1)
        union = pop[:, None] + pop[None, :] - inter
        with np.errstate(invalid="ignore"):
            want = np.where(union == 0, 0.0, inter / np.maximum(union, 1))
        masks = [BinaryMask(row.reshape(3, 3)) for row in bits]
        for a in range(512):
            got = np.array([iou(masks[a], masks[b]) for b in range(512)])
            assert np.array_equal(got, want[a])

        # threshold popcount matches brute force on 1000 random grids
        rng = np.random.default_rng(1)
        for _ in range(1000):
            h, w = rng.integers(1, 14, size=2)
            hm = Heatmap2D(rng.random((h, w)))
            assert threshold_mask(hm, 0.9).popcount() == \
                reference_threshold_count(hm.values, 0.9)

        # bicubic: constant grids stay constant, same dims reproduce exactly
        for dims in [(2, 2), (5, 3), (7, 7)]:
            const = bicubic_upscale(Heatmap2D(np.full(dims, 3.7)), 17, 13)
            assert np.max(np.abs(const.data - 3.7)) < 1e-9
            src = Heatmap2D(rng.random(dims))
            same = bicubic_upscale(src, dims[1], dims[0])
            assert np.max(np.abs(same.data - src.data)) < 1e-9

        # aggregation equals the slice-loop oracle
        slices = [AttentionSlice("down" if i % 2 else "up", i, 0, i,
                                 rng.random((2, 8, 8))) for i in range(4)]
        stack = AttentionStack(("a", "b"), slices)
        for k in range(2):
            want_hm = np.zeros((16, 16))
            for s in slices:
                want_hm += reference_bicubic(s.scores[k], 16, 16)
            got_hm = aggregate_token_heatmap(stack, k, 16, 16)
            assert np.max(np.abs(got_hm.data - want_hm)) < 1e-9

        # verdicts invariant under per-token strictly increasing rescales
        specs = synth_suite(100, seed=77)
        rescales = [lambda x: 3.0 * x + 1.0, lambda x: x**1.5, lambda x: np.expm1(0.2 * x)]
        for idx, spec in enumerate(specs):
            bundle, _ = synth_bundle(spec)
            heatmaps = bundle.role_heatmaps()
            base = evaluate_instance(spec.id, heatmaps, spec.gold, bundle.caption_flag)
            twisted = {
                role: Heatmap2D(rescales[(idx + j) % len(rescales)](hm.data))
                for j, (role, hm) in enumerate(heatmaps.items())
            }
            again = evaluate_instance(spec.id, twisted, spec.gold, bundle.caption_flag)
            assert again == base


def test_calibration_plateau():
    with criterion("calibration (full-agreement plateau contains 0.40)"):
        positives = np.linspace(0.46, 0.89, 25)
        negatives = np.linspace(0.01, 0.34, 25)
        pairs = [LabeledPair(f"p{k}", float(v), True) for k, v in enumerate(positives)]
        pairs += [LabeledPair(f"n{k}", float(v), False) for k, v in enumerate(negatives)]
        curve = dict(agreement_curve(pairs, default_grid()))
        assert max(curve.values()) == 1.0
        assert curve[0.4] == 1.0
        plateau = sorted(t for t, a in curve.items() if a == 1.0)
        assert plateau[0] <= 0.4 <= plateau[-1]


def _mutate(rng, data: bytes) -> bytes:
    out = bytearray(data)
    for _ in range(int(rng.integers(1, 10))):
        op = rng.integers(4)
        if op == 0 and out:
            out[rng.integers(len(out))] = rng.integers(256)
        elif op == 1 and out:
            del out[rng.integers(len(out))]
        elif op == 2:
            out.insert(int(rng.integers(len(out) + 1)), int(rng.integers(256)))
        elif op == 3 and len(out) > 8:
            out = out[: rng.integers(1, len(out))]
    return bytes(out)


def test_format_robustness():
    with criterion("format robustness (10,000 fuzzed files, bit-exact round trips)"):
        rng = np.random.default_rng(1234)
        f32 = lambda a: a.astype(np.float32).astype(np.float64)
        from winovis.bundle_io import HeatmapBundle

        bundle = HeatmapBundle(
            instance_id="wv-r", width=6, height=4, tokens=("a", "b", "c"),
            caption_flag=False,
            roles={"a": "entity1", "b": "entity2", "c": "pronoun"},
            heatmaps=tuple(Heatmap2D(f32(rng.random((4, 6)))) for _ in range(3)),
        )
        stack = AttentionStack(("a", "b"), [
            AttentionSlice("down", 0, 0, 0, f32(rng.random((2, 3, 3)))),
            AttentionSlice("up", 4, 1, 2, f32(rng.random((2, 5, 5)))),
        ])
        bundle_bytes = write_bundle(bundle)
        stack_bytes = write_stack("wv-r", stack)

        # valid files round-trip bit-exactly
        assert write_bundle(read_bundle(bundle_bytes)) == bundle_bytes
        iid, back = read_stack(stack_bytes)
        assert write_stack(iid, back) == stack_bytes

        rejected = 0
        for k in range(10_000):
            seed_bytes = bundle_bytes if k % 2 == 0 else stack_bytes
            reader = read_bundle if k % 2 == 0 else read_stack
            mutated = _mutate(rng, seed_bytes)
            try:
                reader(mutated)
            except BundleFormatError:
                rejected += 1  # the only permitted failure mode
        assert rejected > 9000  # nearly every mutation must be caught


def test_corpus_tooling():
    with criterion("corpus tooling (validation, prompt assembly, mock cycle)"):
        exemplars = [
            ("The thief stole the diamond because it was valuable.",
             "it", "it was valuable", ("thief", "diamond"), 1),
            ("The man carried the child because he was tired.",
             "he", "he was tired", ("man", "child"), 1),
            ("The king banished the jester because he was annoying.",
             "he", "he was annoying", ("king", "jester"), 1),
        ]
        for statement, pronoun, snippet, options, answer in exemplars:
            inst = WinoVisInstance(id=instance_id_for(statement), statement=statement,
                                   pronoun=pronoun, snippet=snippet, options=options,
                                   answer=answer, reason="exemplar")
            assert validate_instance(inst) == []

        violating = [
            dict(snippet="he was sleepy"),                      # not a substring
            dict(pronoun="she"),                                # pronoun absent
            dict(options=("thief", "valuable")),                # option inside snippet
            dict(options=("thief", "emerald")),                 # option missing
            dict(answer=7),                                     # answer arity
            dict(options=("diamond", "Diamond")),               # duplicate options
        ]
        base = exemplars[0]
        for override in violating:
            fields = dict(statement=base[0], pronoun=base[1], snippet=base[2],
                          options=base[3], answer=base[4])
            fields.update(override)
            inst = WinoVisInstance(id="x", reason="", **fields)
            assert validate_instance(inst) != []

        prompt = build_prompt(default_template(), 1)
        for rule in CRITERIA_RULES:
            assert rule in prompt

        statements = [
            (f"The {a} number {k} lifted the {b} because it was light.", a, b)
            for k, (a, b) in enumerate([("falcon", "crate"), ("garden", "hose"),
                                        ("hammer", "nail"), ("island", "ferry"),
                                        ("jacket", "zipper")])
        ]
        batch = "\n".join(json.dumps({
            "statement": s, "pronoun": "it", "snippet": "it was light",
            "options": [a, b], "answer": k % 2, "reason": "because",
        }) for k, (s, a, b) in enumerate(statements))
        results = []
        for _ in range(2):
            result = run_cycle(ScriptedClient([batch]), default_template(), 5)
            assert result.completed
            assert all(validate_instance(c) == [] for c in result.accepted)
            results.append([c.id for c in result.accepted])
        assert results[0] == results[1]  # deterministic against the same transcript
