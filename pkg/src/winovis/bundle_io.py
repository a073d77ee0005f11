"""Bit-exact persistence for every artifact the pipeline exchanges.

Two binary containers share one envelope: a 4-byte magic, a little-endian
u16 version, a little-endian u32 header length, a UTF-8 JSON header, and a
raw float32 little-endian payload whose size is fully determined by the
header. Readers validate the length arithmetic before touching the payload,
so corrupt or truncated files fail with a :class:`BundleFormatError` and
never crash or over-allocate.

Heatmap values are float32 on disk and float64 in memory; writing after
reading reproduces the original bytes exactly (headers are serialized in a
canonical form).
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .calibration import LabeledPair
from .corpus import ContextType, EntityClass, FilterLabel, FilterVerdict, WinoVisInstance
from .grid import Heatmap2D
from .metrics import ConfusionMatrix2, MetricsReport, MulticlassMetrics, VerdictCounts, percent_str
from .pipeline import Entity, InstanceVerdict

__all__ = [
    "BundleFormatError",
    "HeatmapBundle",
    "BUNDLE_MAGIC",
    "STACK_MAGIC",
    "FORMAT_VERSION",
    "ROLE_VALUES",
    "write_bundle",
    "read_bundle",
    "write_bundle_file",
    "read_bundle_file",
    "write_stack",
    "read_stack",
    "write_stack_file",
    "read_stack_file",
    "read_caption_flags",
    "read_filter_labels",
    "read_calibration_pairs",
    "write_calibration_curve",
    "write_verdicts_csv",
    "report_to_dict",
    "report_from_dict",
    "write_report_json",
    "write_instances",
    "read_instances",
    "gold_entity",
    "atomic_write_bytes",
    "atomic_write_text",
]

BUNDLE_MAGIC = b"WVHM"
STACK_MAGIC = b"WVAS"
FORMAT_VERSION = 1
ROLE_VALUES = ("entity1", "entity2", "pronoun", "other")
_SPECIAL_ROLES = ("entity1", "entity2", "pronoun")

_F4 = np.dtype("<f4")


class BundleFormatError(ValueError):
    """Raised for any malformed, truncated, or inconsistent file."""


@dataclass(frozen=True)
class HeatmapBundle:
    """One instance's per-token heatmaps plus the role map."""

    instance_id: str
    width: int
    height: int
    tokens: Tuple[str, ...]
    caption_flag: bool
    roles: Dict[str, str]
    heatmaps: Tuple[Heatmap2D, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heatmaps", tuple(self.heatmaps))
        object.__setattr__(self, "roles", dict(self.roles))
        _check_roles(self.roles, self.tokens)
        if len(self.heatmaps) != len(self.tokens):
            raise BundleFormatError("one heatmap per token required")
        for hm in self.heatmaps:
            if (hm.width, hm.height) != (self.width, self.height):
                raise BundleFormatError(
                    f"heatmap dims {hm.width}x{hm.height} differ from bundle "
                    f"dims {self.width}x{self.height}"
                )

    def heatmap_for_role(self, role: str) -> Heatmap2D:
        for token, r in self.roles.items():
            if r == role:
                return self.heatmaps[self.tokens.index(token)]
        raise KeyError(f"no token with role {role!r}")

    def role_heatmaps(self) -> Dict[str, Heatmap2D]:
        return {role: self.heatmap_for_role(role) for role in _SPECIAL_ROLES}


def _check_roles(roles: Dict[str, str], tokens: Sequence[str]) -> None:
    for token, role in roles.items():
        if role not in ROLE_VALUES:
            raise BundleFormatError(f"unknown role {role!r} for token {token!r}")
        if token not in tokens:
            raise BundleFormatError(f"role map names unknown token {token!r}")
    for special in _SPECIAL_ROLES:
        holders = [t for t, r in roles.items() if r == special]
        if len(holders) != 1:
            raise BundleFormatError(
                f"incomplete role map: role {special!r} held by {len(holders)} tokens"
            )
        if tokens.count(holders[0]) != 1:
            raise BundleFormatError(
                f"token {holders[0]!r} with role {special!r} appears "
                f"{tokens.count(holders[0])} times in the token list"
            )


def _canonical_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _envelope(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = _canonical_header(header)
    return magic + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + payload


def _open_envelope(data: bytes, magic: bytes, kind: str) -> Tuple[dict, bytes]:
    if len(data) < 10:
        raise BundleFormatError(f"not a {kind} file: too short")
    if data[:4] != magic:
        raise BundleFormatError(f"not a {kind} file")
    version, header_len = struct.unpack("<HI", data[4:10])
    if version > FORMAT_VERSION:
        raise BundleFormatError(f"unsupported version {version}")
    if version < 1:
        raise BundleFormatError(f"unsupported version {version}")
    if 10 + header_len > len(data):
        raise BundleFormatError("truncated or corrupt payload: header exceeds file")
    try:
        header = json.loads(data[10:10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"invalid header JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise BundleFormatError("invalid header JSON: not an object")
    return header, data[10 + header_len:]


def _require(header: dict, key: str, types, what: str):
    if key not in header:
        raise BundleFormatError(f"header missing key {key!r}")
    value = header[key]
    ok = isinstance(value, types)
    if ok and isinstance(value, bool) and types is not bool:
        ok = False  # bools are ints in Python; never accept one as an int
    if not ok:
        raise BundleFormatError(f"header key {key!r} must be {what}")
    return value


def _require_dim(header: dict, key: str) -> int:
    value = _require(header, key, int, "a positive integer")
    if isinstance(value, bool) or value < 1:
        raise BundleFormatError(f"header key {key!r} must be a positive integer")
    return value


def _require_tokens(header: dict) -> List[str]:
    tokens = _require(header, "tokens", list, "a list of strings")
    if not all(isinstance(t, str) for t in tokens):
        raise BundleFormatError("header key 'tokens' must be a list of strings")
    return tokens


def _grids_to_f32(grids: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(g, dtype=_F4).tobytes() for g in grids)


def _f32_grid(payload: bytes, offset: int, w: int, h: int, what: str) -> np.ndarray:
    raw = payload[offset: offset + w * h * 4]
    with np.errstate(all="ignore"):  # fuzzed bytes may decode to signaling NaNs
        arr = np.frombuffer(raw, dtype=_F4).astype(np.float64).reshape(h, w)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise BundleFormatError(f"invalid {what} values: must be finite and non-negative")
    return arr


# ---------------------------------------------------------------------------
# Heatmap bundle (WVHM)

def write_bundle(bundle: HeatmapBundle) -> bytes:
    header = {
        "instance_id": bundle.instance_id,
        "width": bundle.width,
        "height": bundle.height,
        "tokens": list(bundle.tokens),
        "caption_flag": bundle.caption_flag,
        "roles": dict(bundle.roles),
    }
    payload = _grids_to_f32([hm.data for hm in bundle.heatmaps])
    return _envelope(BUNDLE_MAGIC, header, payload)


def read_bundle(data: bytes) -> HeatmapBundle:
    header, payload = _open_envelope(data, BUNDLE_MAGIC, "WVHM")
    instance_id = _require(header, "instance_id", str, "a string")
    width = _require_dim(header, "width")
    height = _require_dim(header, "height")
    tokens = _require_tokens(header)
    caption_flag = _require(header, "caption_flag", bool, "a boolean")
    roles = _require(header, "roles", dict, "a map of token to role")
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in roles.items()):
        raise BundleFormatError("header key 'roles' must map strings to strings")
    _check_roles(roles, tokens)

    expected = len(tokens) * width * height * 4
    if len(payload) != expected:
        raise BundleFormatError(
            f"truncated or corrupt payload: expected {expected} bytes, got {len(payload)}"
        )
    heatmaps = []
    for k in range(len(tokens)):
        try:
            arr = _f32_grid(payload, k * width * height * 4, width, height, "heatmap")
        except ValueError as exc:
            raise BundleFormatError(str(exc)) from exc
        heatmaps.append(Heatmap2D(arr))
    return HeatmapBundle(instance_id, width, height, tuple(tokens), caption_flag,
                         roles, tuple(heatmaps))


# ---------------------------------------------------------------------------
# Raw attention stack (WVAS)

def write_stack(instance_id: str, stack) -> bytes:
    """Serialize an :class:`winovis.attribution.AttentionStack`."""
    slices = sorted(stack.slices, key=lambda s: s.key)
    header = {
        "instance_id": instance_id,
        "tokens": list(stack.tokens),
        "slices": [
            {
                "pathway": s.pathway,
                "timestep": s.timestep,
                "layer": s.layer,
                "head": s.head,
                "grid_w": s.grid_w,
                "grid_h": s.grid_h,
            }
            for s in slices
        ],
    }
    payload = _grids_to_f32([s.scores[k] for s in slices for k in range(len(stack.tokens))])
    return _envelope(STACK_MAGIC, header, payload)


def read_stack(data: bytes):
    """Parse WVAS bytes into (instance_id, AttentionStack)."""
    from .attribution import AttentionSlice, AttentionStack

    header, payload = _open_envelope(data, STACK_MAGIC, "WVAS")
    instance_id = _require(header, "instance_id", str, "a string")
    tokens = _require_tokens(header)
    slice_specs = _require(header, "slices", list, "a list of slice records")

    specs = []
    seen = set()
    expected = 0
    for rec in slice_specs:
        if not isinstance(rec, dict):
            raise BundleFormatError("slice record must be an object")
        pathway = _require(rec, "pathway", str, "a string")
        if pathway not in ("down", "up"):
            raise BundleFormatError(f"slice pathway must be 'down' or 'up', got {pathway!r}")
        timestep = _require(rec, "timestep", int, "an integer")
        layer = _require(rec, "layer", int, "an integer")
        head = _require(rec, "head", int, "an integer")
        for name, val in (("timestep", timestep), ("layer", layer), ("head", head)):
            if isinstance(val, bool) or val < 0:
                raise BundleFormatError(f"slice {name} must be a non-negative integer")
        grid_w = _require_dim(rec, "grid_w")
        grid_h = _require_dim(rec, "grid_h")
        key = (pathway, timestep, layer, head)
        if key in seen:
            raise BundleFormatError(f"duplicate slice key {key}")
        seen.add(key)
        specs.append((pathway, timestep, layer, head, grid_w, grid_h))
        expected += len(tokens) * grid_w * grid_h * 4

    if len(payload) != expected:
        raise BundleFormatError(
            f"truncated or corrupt payload: expected {expected} bytes, got {len(payload)}"
        )

    slices = []
    offset = 0
    for pathway, timestep, layer, head, grid_w, grid_h in specs:
        grids = np.empty((len(tokens), grid_h, grid_w))
        for k in range(len(tokens)):
            try:
                grids[k] = _f32_grid(payload, offset, grid_w, grid_h, "attention score")
            except ValueError as exc:
                raise BundleFormatError(str(exc)) from exc
            offset += grid_w * grid_h * 4
        slices.append(AttentionSlice(pathway, timestep, layer, head, grids))
    try:
        return instance_id, AttentionStack(tokens, slices)
    except ValueError as exc:
        raise BundleFormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# File helpers (atomic writes)

def atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_bundle_file(path, bundle: HeatmapBundle) -> None:
    atomic_write_bytes(path, write_bundle(bundle))


def read_bundle_file(path) -> HeatmapBundle:
    with open(path, "rb") as fh:
        return read_bundle(fh.read())


def write_stack_file(path, instance_id: str, stack) -> None:
    atomic_write_bytes(path, write_stack(instance_id, stack))


def read_stack_file(path):
    with open(path, "rb") as fh:
        return read_stack(fh.read())


# ---------------------------------------------------------------------------
# CSV sidecars

def _read_csv(path, required: Sequence[str]) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise BundleFormatError(f"{path}: empty CSV, expected a header row")
        for col in required:
            if col not in reader.fieldnames:
                raise BundleFormatError(f"{path}: missing required column {col!r}")
        return list(reader)


def _unique_ids(rows: List[dict], path) -> None:
    seen = set()
    for row in rows:
        rid = row["instance_id"]
        if rid in seen:
            raise BundleFormatError(f"{path}: duplicate instance_id {rid!r}")
        seen.add(rid)


def _parse_binary_flag(raw: str, column: str, path) -> bool:
    if raw not in ("0", "1"):
        raise BundleFormatError(f"{path}: column {column!r} must be 0 or 1, got {raw!r}")
    return raw == "1"


def read_caption_flags(path) -> Dict[str, bool]:
    """CSV columns: instance_id, captioned (0/1)."""
    rows = _read_csv(path, ("instance_id", "captioned"))
    _unique_ids(rows, path)
    return {row["instance_id"]: _parse_binary_flag(row["captioned"], "captioned", path)
            for row in rows}


def read_filter_labels(path) -> List[FilterLabel]:
    """CSV columns: instance_id, verdict, note (optional column)."""
    rows = _read_csv(path, ("instance_id", "verdict"))
    _unique_ids(rows, path)
    labels = []
    for row in rows:
        try:
            verdict = FilterVerdict(row["verdict"])
        except ValueError:
            raise BundleFormatError(
                f"{path}: unknown filter verdict {row['verdict']!r}") from None
        labels.append(FilterLabel(row["instance_id"], verdict, row.get("note") or ""))
    return labels


def read_calibration_pairs(path) -> List[LabeledPair]:
    """CSV columns: instance_id, iou_value, human_positive (0/1)."""
    rows = _read_csv(path, ("instance_id", "iou_value", "human_positive"))
    _unique_ids(rows, path)
    pairs = []
    for row in rows:
        try:
            value = float(row["iou_value"])
        except ValueError:
            raise BundleFormatError(
                f"{path}: iou_value must be a number, got {row['iou_value']!r}") from None
        positive = _parse_binary_flag(row["human_positive"], "human_positive", path)
        try:
            pairs.append(LabeledPair(row["instance_id"], value, positive))
        except ValueError as exc:
            raise BundleFormatError(f"{path}: {exc}") from exc
    return pairs


def write_calibration_curve(path, curve: Sequence[Tuple[float, float]]) -> None:
    lines = ["threshold,agreement"]
    lines += [f"{t:.6g},{a!r}" for t, a in curve]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_verdicts_csv(path, verdicts: Sequence[InstanceVerdict],
                       failures: Optional[Dict[str, str]] = None) -> None:
    """Per-instance outcomes; failed instances get an error column entry."""

    def fmt(x):
        return "" if x is None else repr(float(x))

    lines = ["instance_id,status,predicted,iou_entities,iou_pronoun_e1,iou_pronoun_e2,error"]
    for v in verdicts:
        predicted = v.predicted.value if v.predicted else ""
        lines.append(
            f"{v.instance_id},{v.status.value},{predicted},{fmt(v.iou_entities)},"
            f"{fmt(v.iou_pronoun_e1)},{fmt(v.iou_pronoun_e2)},"
        )
    for iid, err in sorted((failures or {}).items()):
        sanitized = err.replace("\n", " ").replace(",", ";")
        lines.append(f"{iid},,,,,,{sanitized}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Report JSON

def _counts_dict(c: VerdictCounts) -> dict:
    return {
        "captioned": c.captioned,
        "overlapped": c.overlapped,
        "correct": c.correct,
        "incorrect": c.incorrect,
        "neither": c.neither,
        "evaluable": c.evaluable(),
        "total": c.total(),
    }


def report_to_dict(report: MetricsReport) -> dict:
    """JSON-ready dict mirroring the report's field names.

    Alongside exact values, each block carries one-decimal renderings and
    each status's share of the block total so breakdown charts can be read
    straight off the file.
    """
    c = report.counts
    total = c.total()
    out = {
        "counts": _counts_dict(c),
        "status_percent_of_total": {
            name: (100.0 * getattr(c, name) / total if total else None)
            for name in ("captioned", "overlapped", "correct", "incorrect", "neither")
        },
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "certainty": report.certainty,
        "rendered": {
            name: percent_str(getattr(report, name))
            for name in ("precision", "recall", "f1", "certainty")
        },
        "confusion": {
            "c11": report.confusion.c11,
            "c12": report.confusion.c12,
            "c21": report.confusion.c21,
            "c22": report.confusion.c22,
        },
        "multiclass": {
            "accuracy": report.multiclass.accuracy,
            "macro_precision": report.multiclass.macro_precision,
            "macro_recall": report.multiclass.macro_recall,
            "macro_f1": report.multiclass.macro_f1,
        },
        "low_support": report.low_support,
    }
    if report.per_category:
        out["per_category"] = {
            dim: {name: report_to_dict(sub) for name, sub in buckets.items()}
            for dim, buckets in report.per_category.items()
        }
    return out


def report_from_dict(data: dict) -> MetricsReport:
    counts = VerdictCounts(**{
        k: data["counts"][k]
        for k in ("captioned", "overlapped", "correct", "incorrect", "neither")
    })
    per_category = {
        dim: {name: report_from_dict(sub) for name, sub in buckets.items()}
        for dim, buckets in data.get("per_category", {}).items()
    }
    return MetricsReport(
        counts=counts,
        precision=data["precision"],
        recall=data["recall"],
        f1=data["f1"],
        certainty=data["certainty"],
        confusion=ConfusionMatrix2(**data["confusion"]),
        multiclass=MulticlassMetrics(**data["multiclass"]),
        low_support=data["low_support"],
        per_category=per_category,
    )


def write_report_json(path, report: MetricsReport) -> None:
    atomic_write_text(path, json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Instance records (JSONL)

def _instance_to_dict(inst: WinoVisInstance) -> dict:
    return {
        "id": inst.id,
        "statement": inst.statement,
        "pronoun": inst.pronoun,
        "snippet": inst.snippet,
        "options": list(inst.options),
        "answer": inst.answer,
        "reason": inst.reason,
        "entity_class": inst.entity_class.value if inst.entity_class else None,
        "context_type": inst.context_type.value if inst.context_type else None,
    }


def write_instances(path, instances: Sequence[WinoVisInstance]) -> None:
    lines = [json.dumps(_instance_to_dict(inst), sort_keys=True) for inst in instances]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_instances(path) -> List[WinoVisInstance]:
    instances = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BundleFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise BundleFormatError(f"{path}:{lineno}: record must be an object")
            for key in ("id", "statement", "pronoun", "snippet", "options", "answer", "reason"):
                if key not in rec:
                    raise BundleFormatError(f"{path}:{lineno}: missing field {key!r}")
            if rec["id"] in seen:
                raise BundleFormatError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            try:
                ec = EntityClass(rec["entity_class"]) if rec.get("entity_class") else None
                ct = ContextType(rec["context_type"]) if rec.get("context_type") else None
                opts = rec["options"]
                if not (isinstance(opts, list) and len(opts) == 2):
                    raise ValueError("options must be a list of two strings")
                instances.append(WinoVisInstance(
                    id=rec["id"],
                    statement=rec["statement"],
                    pronoun=rec["pronoun"],
                    snippet=rec["snippet"],
                    options=(opts[0], opts[1]),
                    answer=rec["answer"],
                    reason=rec["reason"],
                    entity_class=ec,
                    context_type=ct,
                ))
            except ValueError as exc:
                raise BundleFormatError(f"{path}:{lineno}: {exc}") from exc
    return instances


def gold_entity(inst: WinoVisInstance) -> Entity:
    """Map the answer index onto the entity enum (0 -> entity 1)."""
    if inst.answer not in (0, 1):
        raise ValueError(f"instance {inst.id} has no valid answer")
    return Entity.ENTITY1 if inst.answer == 0 else Entity.ENTITY2
