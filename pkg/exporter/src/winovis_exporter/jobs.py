"""Export jobs: run a backend over an instances file and write the engine's
bundle (and optionally raw stack) files plus a run manifest.

Per-instance failures are recorded in the manifest and never abort the
run. All file writes are atomic.
"""
from __future__ import annotations

import csv
import json
import os
import platform
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import aggregation, formats

DEFAULT_IMAGE_SIZE = 64  # fixture-friendly; real SD runs use 512


@dataclass
class ExportJob:
    instances_path: str
    model_id: str
    out_dir: str
    steps: int = 50
    seed: int = 0
    emit_raw_stacks: bool = False
    overlay_debug_images: bool = False
    image_size: int = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def read_instances(path) -> List[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _library_versions() -> dict:
    versions = {"numpy": np.__version__, "python": platform.python_version()}
    for name in ("torch", "diffusers", "transformers", "PIL"):
        try:
            mod = __import__(name)
            versions[name] = getattr(mod, "__version__", "unknown")
        except ImportError:
            pass
    return versions


def _write_overlay(path, image: Optional[np.ndarray], heatmap: np.ndarray) -> None:
    from PIL import Image

    h, w = heatmap.shape
    lo, hi = float(heatmap.min()), float(heatmap.max())
    norm = (heatmap - lo) / (hi - lo) if hi > lo else np.zeros_like(heatmap)
    heat = np.zeros((h, w, 3), dtype=np.uint8)
    heat[..., 0] = (norm * 255).astype(np.uint8)  # red channel carries attention
    if image is not None:
        base = Image.fromarray(image).convert("RGB").resize((w, h))
        out = Image.blend(base, Image.fromarray(heat), alpha=0.55)
    else:
        out = Image.fromarray(heat)
    tmp = f"{path}.part.{os.getpid()}"
    out.save(tmp, format="PNG")
    os.replace(tmp, path)


def export_run(job: ExportJob, backend) -> dict:
    """Generate every instance, write bundles (+ optional stacks/overlays),
    and return the manifest (also written to out_dir/manifest.json)."""
    instances = read_instances(job.instances_path)
    os.makedirs(job.out_dir, exist_ok=True)
    manifest = {
        "model_id": job.model_id,
        "backend": getattr(backend, "name", type(backend).__name__),
        "steps": job.steps,
        "seed": job.seed,
        "image_size": job.image_size,
        "library_versions": _library_versions(),
        "instances": [],
    }
    for inst in instances:
        entry = {"id": inst["id"], "status": "ok", "files": []}
        manifest["instances"].append(entry)
        try:
            terms = (inst["options"][0], inst["options"][1], inst["pronoun"])
            capture = backend.generate(inst["statement"], terms, job.steps, job.seed)
            if not capture.slices:
                raise RuntimeError("backend produced no attention slices")

            heatmaps = aggregation.aggregate(capture.slices, job.image_size, job.image_size)
            roles = {terms[0]: "entity1", terms[1]: "entity2", terms[2]: "pronoun"}
            bundle_path = os.path.join(job.out_dir, f"{inst['id']}.wvhm")
            formats.atomic_write(bundle_path, formats.pack_bundle(
                inst["id"], job.image_size, job.image_size, terms,
                bool(inst.get("caption_flag", False)), roles, list(heatmaps)))
            entry["files"].append(os.path.basename(bundle_path))

            if job.emit_raw_stacks:
                stack_path = os.path.join(job.out_dir, f"{inst['id']}.wvas")
                formats.atomic_write(stack_path, formats.pack_stack(
                    inst["id"], terms, capture.slices))
                entry["files"].append(os.path.basename(stack_path))

            if job.overlay_debug_images:
                for k, term in enumerate(terms):
                    safe = "".join(c if c.isalnum() else "_" for c in term)
                    overlay_path = os.path.join(
                        job.out_dir, f"{inst['id']}.{k}.{safe}.png")
                    _write_overlay(overlay_path, capture.image, heatmaps[k])
                    entry["files"].append(os.path.basename(overlay_path))
        except Exception as exc:
            entry["status"] = "error"
            entry["error"] = f"{type(exc).__name__}: {exc}"

    manifest_path = os.path.join(job.out_dir, "manifest.json")
    formats.atomic_write(manifest_path,
                         (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def merge_caption_flags(bundle_dir, labels_csv) -> int:
    """Rewrite bundle headers according to a caption-flags CSV.

    Returns the number of bundles updated; an id without a bundle is an
    error, an empty CSV is a no-op.
    """
    with open(labels_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None:
            for col in ("instance_id", "captioned"):
                if col not in reader.fieldnames:
                    raise ValueError(f"missing required column {col!r}")
        rows = list(reader)
    updated = 0
    for row in rows:
        iid = row["instance_id"]
        path = os.path.join(bundle_dir, f"{iid}.wvhm")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no bundle for instance {iid!r}")
        with open(path, "rb") as fh:
            header, grids = formats.unpack_bundle(fh.read())
        header["caption_flag"] = row["captioned"] == "1"
        formats.atomic_write(path, formats.pack_bundle(
            header["instance_id"], header["width"], header["height"],
            header["tokens"], header["caption_flag"], header["roles"], grids))
        updated += 1
    return updated
