"""Command-line surface tying the pipeline together.

Subcommands: evaluate, aggregate, calibrate, generate-corpus,
validate-corpus, synth-fixtures. Every command accepts --config (a JSON
file of defaults; explicit flags win) and --dry-run (print the resolved
configuration and planned file operations, write nothing).

Exit codes: 0 success, 1 hard error (unreadable inputs, aborted cycle),
2 partial completion (missing bundles, failed files, target not reached).
Partial results are still written in the exit-2 cases.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

from . import bundle_io, calibration, corpus, fixtures, metrics
from .pipeline import InstanceVerdict, PipelineConfig, evaluate_instance

__all__ = [
    "main",
    "cmd_evaluate",
    "cmd_aggregate",
    "cmd_calibrate",
    "cmd_generate_corpus",
    "cmd_validate_corpus",
    "cmd_synth_fixtures",
]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


def _load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge config-file values under explicit command-line flags."""
    resolved = vars(args).copy()
    config_path = resolved.pop("config", None)
    if config_path:
        file_cfg = _load_config_file(config_path)
        defaults = {
            a.dest: a.default for a in parser._actions if a.dest not in ("help", "config")
        }
        for key, value in file_cfg.items():
            dest = key.replace("-", "_")
            if dest not in defaults:
                raise ValueError(f"unknown config key {key!r}")
            # a flag explicitly given on the command line beats the file
            if resolved.get(dest) == defaults[dest]:
                resolved[dest] = value
    return resolved


def _dry_run_banner(command: str, cfg: dict, planned: List[str]) -> None:
    print(f"dry-run: {command}")
    for key in sorted(cfg):
        if key in ("dry_run", "func", "parser"):
            continue
        print(f"  {key} = {cfg[key]!r}")
    for op in planned:
        print(f"  would {op}")


def _pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        quantile_q=cfg["quantile"],
        overlap_threshold=cfg["overlap_threshold"],
        decision_threshold=cfg["decision_threshold"],
    )


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(cfg: dict) -> int:
    try:
        instances = bundle_io.read_instances(cfg["instances"])
        caption_overrides: Dict[str, bool] = {}
        if cfg.get("labels"):
            caption_overrides = bundle_io.read_caption_flags(cfg["labels"])
        pipeline_cfg = _pipeline_config(cfg)
        bundle_dir = cfg["bundles"]
        if not os.path.isdir(bundle_dir):
            raise FileNotFoundError(f"bundle directory {bundle_dir!r} does not exist")
    except Exception as exc:
        return _fail(str(exc))

    out_dir = cfg["out"]
    formats = set((cfg.get("format") or "json,csv").split(","))
    if cfg.get("dry_run"):
        _dry_run_banner("evaluate", cfg, [
            f"evaluate {len(instances)} instances against bundles in {bundle_dir}",
            f"write {os.path.join(out_dir, 'verdicts.csv')}" if "csv" in formats else "skip csv",
            f"write {os.path.join(out_dir, 'report.json')}" if "json" in formats else "skip json",
        ])
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    by_id = {inst.id: inst for inst in instances}

    def evaluate_one(inst) -> tuple:
        path = os.path.join(bundle_dir, f"{inst.id}.wvhm")
        if not os.path.exists(path):
            return inst.id, None, "missing bundle"
        try:
            bundle = bundle_io.read_bundle_file(path)
            flag = caption_overrides.get(inst.id, bundle.caption_flag)
            verdict = evaluate_instance(
                inst.id, bundle.role_heatmaps(), bundle_io.gold_entity(inst), flag, pipeline_cfg
            )
            return inst.id, verdict, None
        except Exception as exc:
            return inst.id, None, f"{type(exc).__name__}: {exc}"

    jobs = max(1, int(cfg.get("jobs") or 1))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate_one, instances))
    else:
        results = [evaluate_one(inst) for inst in instances]

    verdicts: List[InstanceVerdict] = []
    failures: Dict[str, str] = {}
    for iid, verdict, error in results:
        if verdict is not None:
            verdicts.append(verdict)
        else:
            failures[iid] = error
    verdicts.sort(key=lambda v: v.instance_id)

    if "csv" in formats:
        bundle_io.write_verdicts_csv(os.path.join(out_dir, "verdicts.csv"), verdicts, failures)
    if "json" in formats:
        report = metrics.build_report(verdicts, by_id)
        bundle_io.write_report_json(os.path.join(out_dir, "report.json"), report)

    for iid, error in sorted(failures.items()):
        print(f"{iid}: {error}", file=sys.stderr)
    print(f"evaluated {len(verdicts)}/{len(instances)} instances")
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# aggregate

def _roles_for(inst: corpus.WinoVisInstance, tokens) -> Dict[str, str]:
    roles = {}
    wanted = ((inst.options[0], "entity1"), (inst.options[1], "entity2"),
              (inst.pronoun, "pronoun"))
    for term, role in wanted:
        matches = [t for t in tokens if t.casefold() == term.casefold()]
        if len(matches) != 1:
            raise ValueError(
                f"cannot assign role {role!r}: term {term!r} matches {len(matches)} stack tokens"
            )
        roles[matches[0]] = role
    for t in tokens:
        roles.setdefault(t, "other")
    return roles


def cmd_aggregate(cfg: dict) -> int:
    from .attribution import aggregate_all

    try:
        instances = {i.id: i for i in bundle_io.read_instances(cfg["instances"])}
        caption_flags: Dict[str, bool] = {}
        if cfg.get("labels"):
            caption_flags = bundle_io.read_caption_flags(cfg["labels"])
        stack_dir = cfg["stacks"]
        stack_files = sorted(f for f in os.listdir(stack_dir) if f.endswith(".wvas"))
    except Exception as exc:
        return _fail(str(exc))

    out_dir = cfg["out"]
    if cfg.get("dry_run"):
        _dry_run_banner("aggregate", cfg, [
            f"aggregate {len(stack_files)} stack file(s) from {stack_dir} into {out_dir}"
        ])
        return EXIT_OK
    if not stack_files:
        print("no .wvas files found", file=sys.stderr)
        os.makedirs(out_dir, exist_ok=True)
        return EXIT_PARTIAL

    os.makedirs(out_dir, exist_ok=True)
    failures = 0
    for name in stack_files:
        path = os.path.join(stack_dir, name)
        try:
            instance_id, stack = bundle_io.read_stack_file(path)
            inst = instances.get(instance_id)
            if inst is None:
                raise ValueError(f"no instance record for {instance_id!r}")
            out_w = cfg.get("width") or max(s.grid_w for s in stack.slices)
            out_h = cfg.get("height") or max(s.grid_h for s in stack.slices)
            heatmaps = aggregate_all(stack, out_w, out_h)
            bundle = bundle_io.HeatmapBundle(
                instance_id=instance_id,
                width=out_w,
                height=out_h,
                tokens=stack.tokens,
                caption_flag=caption_flags.get(instance_id, False),
                roles=_roles_for(inst, stack.tokens),
                heatmaps=heatmaps.heatmaps,
            )
            bundle_io.write_bundle_file(
                os.path.join(out_dir, f"{instance_id}.wvhm"), bundle)
        except Exception as exc:
            failures += 1
            print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
    done = len(stack_files) - failures
    print(f"aggregated {done}/{len(stack_files)} stack file(s)")
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# calibrate

def cmd_calibrate(cfg: dict) -> int:
    try:
        pairs = bundle_io.read_calibration_pairs(cfg["labels"])
        if not pairs:
            raise ValueError(f"{cfg['labels']}: no labeled pairs")
        grid = calibration.default_grid(cfg.get("grid_step") or 0.05)
    except Exception as exc:
        return _fail(str(exc))

    out_dir = cfg["out"]
    if cfg.get("dry_run"):
        _dry_run_banner("calibrate", cfg, [
            f"write {os.path.join(out_dir, 'agreement_curve.csv')}",
            f"write {os.path.join(out_dir, 'selected_threshold.json')}",
        ])
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    curve = calibration.agreement_curve(pairs, grid)
    chosen = calibration.select_threshold(curve)
    bundle_io.write_calibration_curve(os.path.join(out_dir, "agreement_curve.csv"), curve)
    bundle_io.atomic_write_text(
        os.path.join(out_dir, "selected_threshold.json"),
        json.dumps({"threshold": chosen, "pairs": len(pairs)}, sort_keys=True) + "\n",
    )
    print(f"selected threshold {chosen:g} from {len(pairs)} labeled pairs")
    return EXIT_OK


# ---------------------------------------------------------------------------
# corpus commands

def cmd_generate_corpus(cfg: dict) -> int:
    try:
        tmpl = corpus.default_template(batch_size=cfg.get("batch_size") or 10)
        if cfg.get("mock_transcript"):
            with open(cfg["mock_transcript"], encoding="utf-8") as fh:
                responses = json.load(fh)
            if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
                raise ValueError("mock transcript must be a JSON array of strings")
            client = corpus.ScriptedClient(responses)
        else:
            if not cfg.get("endpoint") or not cfg.get("model"):
                raise ValueError("either --mock-transcript or --endpoint and --model are required")
            client = corpus.HttpChatClient(
                cfg["endpoint"], cfg["model"],
                api_key_env=cfg.get("api_key_env") or "WINOVIS_API_KEY")
    except Exception as exc:
        return _fail(str(exc))

    out_dir = cfg["out"]
    target = cfg.get("target") or 10
    if cfg.get("dry_run"):
        _dry_run_banner("generate-corpus", cfg, [
            f"request batches of {tmpl.batch_size} until {target} candidates",
            f"write {os.path.join(out_dir, 'candidates.jsonl')}",
            f"write {os.path.join(out_dir, 'audit.json')}",
        ])
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    result = corpus.run_cycle(
        client, tmpl, target, request_cap=cfg.get("request_cap") or 50,
        redundancy_threshold=cfg.get("redundancy_threshold") or 0.8,
    )
    bundle_io.write_instances(os.path.join(out_dir, "candidates.jsonl"), result.accepted)
    audit = [
        {
            "request_index": rec.request_index,
            "start_index": rec.start_index,
            "prompt_sha256": rec.prompt_sha256,
            "response_sha256": rec.response_sha256,
            "accepted_ids": rec.accepted_ids,
            "rejections": [list(r) for r in rec.rejections],
            "error": rec.error,
        }
        for rec in result.audit_log
    ]
    bundle_io.atomic_write_text(
        os.path.join(out_dir, "audit.json"),
        json.dumps({"completed": result.completed, "abort_reason": result.abort_reason,
                    "requests": audit}, indent=2, sort_keys=True) + "\n",
    )
    print(f"accepted {len(result.accepted)}/{target} candidates "
          f"in {len(result.audit_log)} request(s)")
    if result.abort_reason:
        print(f"aborted: {result.abort_reason}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if result.completed else EXIT_PARTIAL


def cmd_validate_corpus(cfg: dict) -> int:
    try:
        instances = bundle_io.read_instances(cfg["instances"])
        labels = bundle_io.read_filter_labels(cfg["labels"]) if cfg.get("labels") else []
    except Exception as exc:
        return _fail(str(exc))

    if cfg.get("dry_run"):
        _dry_run_banner("validate-corpus", cfg, [f"validate {len(instances)} instance(s)"])
        return EXIT_OK

    kept, excluded = corpus.apply_filter_labels(instances, labels)
    bad = 0
    for inst in kept:
        for violation in corpus.validate_instance(inst):
            bad += 1
            print(f"{inst.id}: {violation.code}: {violation.detail}", file=sys.stderr)
    flags = corpus.redundancy_scan(kept, cfg.get("redundancy_threshold") or 0.8)
    for id_a, id_b, sim in flags:
        print(f"review: {id_a} ~ {id_b} (jaccard {sim:.2f})")
    for verdict, ids in sorted(excluded.items()):
        print(f"excluded by filter label {verdict}: {len(ids)}")
    shares = corpus.tag_proportions(kept)
    for dim, values in shares.items():
        rendered = ", ".join(f"{k} {v:.1f}%" for k, v in values.items())
        print(f"{dim}: {rendered}")
    print(f"{len(kept)} instance(s), {bad} violation(s), {len(flags)} redundancy flag(s)")
    return EXIT_OK if bad == 0 else EXIT_ERROR


def cmd_synth_fixtures(cfg: dict) -> int:
    out_dir = cfg["out"]
    count = cfg.get("count")
    count = 200 if count is None else count
    seed = cfg.get("seed")
    seed = 42 if seed is None else seed
    if cfg.get("dry_run"):
        _dry_run_banner("synth-fixtures", cfg, [
            f"write {count} bundle(s), instances.jsonl and expected.csv under {out_dir}"
        ])
        return EXIT_OK
    try:
        specs = fixtures.synth_suite(count, seed,
                                     width=cfg.get("width") or 64,
                                     height=cfg.get("height") or 64)
        fixtures.write_suite(out_dir, specs)
    except Exception as exc:
        return _fail(str(exc))
    print(f"wrote {count} scenario(s) to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    p.add_argument("--dry-run", action="store_true", dest="dry_run",
                   help="print the resolved config and planned writes, change nothing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winovis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="run the verdict pipeline over bundles")
    p.add_argument("--instances", required=True)
    p.add_argument("--bundles", required=True)
    p.add_argument("--labels", help="caption-flags CSV overriding bundle headers")
    p.add_argument("--out", required=True)
    p.add_argument("--quantile", type=float, default=0.9)
    p.add_argument("--overlap-threshold", type=float, default=0.4, dest="overlap_threshold")
    p.add_argument("--decision-threshold", type=float, default=0.4, dest="decision_threshold")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", default="json,csv", help="comma-separated subset of json,csv")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser("aggregate", help="turn raw attention stacks into heatmap bundles")
    p.add_argument("--stacks", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--labels", help="caption-flags CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, help="output width (default: finest slice width)")
    p.add_argument("--height", type=int, help="output height (default: finest slice height)")
    _add_common(p)
    p.set_defaults(func=cmd_aggregate, parser=p)

    p = sub.add_parser("calibrate", help="agreement curve and threshold from labeled IoUs")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-step", type=float, default=0.05, dest="grid_step")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate, parser=p)

    p = sub.add_parser("generate-corpus", help="run the LLM prompt cycle")
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=10, dest="batch_size")
    p.add_argument("--request-cap", type=int, default=50, dest="request_cap")
    p.add_argument("--redundancy-threshold", type=float, default=0.8,
                   dest="redundancy_threshold")
    p.add_argument("--mock-transcript", dest="mock_transcript",
                   help="JSON array of canned responses (replaces the HTTP client)")
    p.add_argument("--endpoint", help="HTTPS chat-completion endpoint")
    p.add_argument("--model")
    p.add_argument("--api-key-env", default="WINOVIS_API_KEY", dest="api_key_env")
    _add_common(p)
    p.set_defaults(func=cmd_generate_corpus, parser=p)

    p = sub.add_parser("validate-corpus", help="structural checks and redundancy flags")
    p.add_argument("--instances", required=True)
    p.add_argument("--labels", help="filter-labels CSV to apply first")
    p.add_argument("--redundancy-threshold", type=float, default=0.8,
                   dest="redundancy_threshold")
    _add_common(p)
    p.set_defaults(func=cmd_validate_corpus, parser=p)

    p = sub.add_parser("synth-fixtures", help="write the synthetic oracle suite")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=cmd_synth_fixtures, parser=p)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args, args.parser)
    except Exception as exc:
        return _fail(str(exc))
    return args.func(cfg)


if __name__ == "__main__":
    sys.exit(main())
