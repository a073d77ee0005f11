"""Deterministic synthetic bundles with analytically known verdicts.

Each scenario plants one flat-amplitude disc per role on a field of
sub-amplitude noise. Because the disc is sized so the 90th-percentile
threshold lands strictly above every noise value, the thresholded mask
equals the planted disc exactly, and the expected verdict follows from
plain set arithmetic on the rasterized discs; no diffusion run or
approximation is involved.

Noise is drawn from the counter-based Philox4x64-10 generator keyed with
(scenario_seed, token_index): a full height x width uniform field is drawn
row-major, scaled by the noise amplitude, disc cells are overwritten with
the blob amplitude, and the grid is quantized to float32. Any
implementation following that recipe reproduces the files bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bundle_io import HeatmapBundle, atomic_write_text, write_bundle_file, write_instances
from .corpus import ContextType, EntityClass, WinoVisInstance
from .grid import Heatmap2D
from .pipeline import Entity, InstanceVerdict, PipelineConfig, Status

__all__ = [
    "BlobSpec",
    "ScenarioSpec",
    "synth_bundle",
    "synth_suite",
    "write_suite",
    "min_surviving_pixels",
    "rasterize_disc",
    "suite_instance",
]

_ROLES = ("entity1", "entity2", "pronoun")

# visually distinct nouns used to build structurally valid instances
_ENTITY_WORDS = (
    "lighthouse", "violin", "tractor", "pelican", "kettle", "canoe",
    "windmill", "lantern", "tortoise", "anvil", "trumpet", "cactus",
    "locomotive", "umbrella", "beehive", "anchor",
)


@dataclass(frozen=True)
class BlobSpec:
    """A flat disc in relative coordinates on the unit square."""

    center_x: float
    center_y: float
    radius: float
    amplitude: float
    token_role: str

    def __post_init__(self):
        if not (0.0 <= self.center_x <= 1.0 and 0.0 <= self.center_y <= 1.0):
            raise ValueError("blob center must lie in [0, 1]^2")
        if not 0.0 < self.radius <= 0.5:
            raise ValueError("blob radius must lie in (0, 0.5]")
        if self.amplitude <= 0:
            raise ValueError("blob amplitude must be positive")
        if self.token_role not in _ROLES:
            raise ValueError(f"token_role must be one of {_ROLES}")


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to generate one bundle and know its verdict."""

    id: str
    width: int
    height: int
    blobs: Dict[str, BlobSpec]
    noise_amplitude: float
    caption_flag: bool
    gold: Entity
    expected_status: Status
    seed: int
    tokens: Tuple[str, str, str] = ("alpha", "beta", "it")

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("dims must be positive")
        if set(self.blobs) != set(_ROLES):
            raise ValueError(f"blobs must cover exactly the roles {_ROLES}")
        amp_floor = min(b.amplitude for b in self.blobs.values())
        if not 0.0 <= self.noise_amplitude < amp_floor:
            raise ValueError("noise amplitude must be non-negative and below every blob amplitude")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def min_surviving_pixels(n_pixels: int, q: float = 0.9) -> int:
    """Smallest plateau size whose q-quantile threshold exceeds all noise.

    With d cells at the amplitude and the rest strictly below it, the
    interpolated quantile lands strictly above the noise iff d is at least
    this value; the thresholded mask then equals the plateau exactly.
    """
    p = (n_pixels - 1) * q
    lo = math.floor(p)
    if p > lo:
        return n_pixels - 1 - lo
    return n_pixels - lo


def rasterize_disc(blob: BlobSpec, width: int, height: int) -> np.ndarray:
    """Boolean pixel set of the disc; pixel centers at ((x+.5)/w, (y+.5)/h)."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    dx = xs[None, :] - blob.center_x
    dy = ys[:, None] - blob.center_y
    return dx * dx + dy * dy <= blob.radius * blob.radius


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def _analytic_verdict(spec: ScenarioSpec, discs: Dict[str, np.ndarray],
                      cfg: PipelineConfig) -> InstanceVerdict:
    # mirrors the decision rules on exact rasterized sets
    if spec.caption_flag:
        return InstanceVerdict(spec.id, Status.CAPTIONED)
    iou_ents = _mask_iou(discs["entity1"], discs["entity2"])
    if iou_ents > cfg.overlap_threshold:
        return InstanceVerdict(spec.id, Status.OVERLAPPED, iou_entities=iou_ents)
    s1 = _mask_iou(discs["pronoun"], discs["entity1"])
    s2 = _mask_iou(discs["pronoun"], discs["entity2"])
    predicted: Optional[Entity] = None
    if s1 > cfg.decision_threshold and s2 > cfg.decision_threshold:
        if s1 != s2:
            predicted = Entity.ENTITY1 if s1 > s2 else Entity.ENTITY2
    elif s1 > cfg.decision_threshold:
        predicted = Entity.ENTITY1
    elif s2 > cfg.decision_threshold:
        predicted = Entity.ENTITY2
    if predicted is None:
        status = Status.NEITHER
    else:
        status = Status.CORRECT if predicted is spec.gold else Status.INCORRECT
    return InstanceVerdict(spec.id, status, predicted=predicted, iou_entities=iou_ents,
                           iou_pronoun_e1=s1, iou_pronoun_e2=s2)


def synth_bundle(spec: ScenarioSpec,
                 cfg: PipelineConfig = PipelineConfig()) -> Tuple[HeatmapBundle, InstanceVerdict]:
    """Generate the bundle for a scenario plus its analytically derived
    verdict. Raises if a disc cannot survive thresholding or the geometry
    does not produce the declared expected status."""
    n = spec.width * spec.height
    d_min = min_surviving_pixels(n, cfg.quantile_q)
    discs = {}
    for role in _ROLES:
        disc = rasterize_disc(spec.blobs[role], spec.width, spec.height)
        d = int(np.count_nonzero(disc))
        if d < d_min:
            raise ValueError(
                f"{spec.id}/{role}: disc covers {d} px but at least {d_min} of {n} are "
                f"needed to survive the {cfg.quantile_q:.0%} threshold"
            )
        if d > 0.25 * n:
            raise ValueError(f"{spec.id}/{role}: disc covers {d}/{n} px; keep blobs localized")
        discs[role] = disc

    heatmaps = []
    for token_index, role in enumerate(_ROLES):
        blob = spec.blobs[role]
        rng = np.random.Generator(
            np.random.Philox(key=np.array([spec.seed, token_index], dtype=np.uint64)))
        field = rng.random((spec.height, spec.width)) * spec.noise_amplitude
        field[discs[role]] = blob.amplitude
        heatmaps.append(Heatmap2D(field.astype(np.float32).astype(np.float64)))

    verdict = _analytic_verdict(spec, discs, cfg)
    if verdict.status is not spec.expected_status:
        raise ValueError(
            f"{spec.id}: geometry produced {verdict.status.value}, "
            f"spec declared {spec.expected_status.value}"
        )
    bundle = HeatmapBundle(
        instance_id=spec.id,
        width=spec.width,
        height=spec.height,
        tokens=spec.tokens,
        caption_flag=spec.caption_flag,
        roles={spec.tokens[0]: "entity1", spec.tokens[1]: "entity2", spec.tokens[2]: "pronoun"},
        heatmaps=tuple(heatmaps),
    )
    return bundle, verdict


def _derived_seed(seed: int, index: int) -> int:
    # splitmix-style golden-ratio stream so scenario seeds never collide
    return (seed * 0x9E3779B97F4A7C15 + index) % 2**64


_R = 0.1875  # 12/64: dyadic, ~460 px at 64x64, safely past the survival bound


def _blobs(e1: Tuple[float, float], e2: Tuple[float, float], pr: Tuple[float, float],
           r: float = _R) -> Dict[str, BlobSpec]:
    return {
        "entity1": BlobSpec(e1[0], e1[1], r, 4.0, "entity1"),
        "entity2": BlobSpec(e2[0], e2[1], r, 4.0, "entity2"),
        "pronoun": BlobSpec(pr[0], pr[1], r, 4.0, "pronoun"),
    }


def _scenario_geometry(kind: str, jitter: Tuple[float, float]) -> Tuple[Dict[str, BlobSpec], bool]:
    """(blobs, caption_flag) for a scenario kind; jitter shifts the easy
    layouts without touching the tight both-above / tie geometries."""
    jx, jy = jitter
    a = (0.28 + jx, 0.30 + jy)
    b = (0.72 + jx, 0.70 + jy)
    apart = (0.50 + jx, 0.78 + jy)
    if kind in ("correct", "captioned"):
        return _blobs(a, b, a), kind == "captioned"
    if kind == "incorrect":
        return _blobs(a, b, b), False
    if kind == "neither":
        return _blobs((0.25 + jx, 0.25 + jy), (0.75 + jx, 0.25 + jy), apart), False
    if kind == "overlapped":
        return _blobs(a, a, apart), False
    # tight geometries: all coordinates dyadic so mirror symmetry is exact
    if kind == "tie":
        return _blobs((0.390625, 0.5), (0.609375, 0.5), (0.5, 0.5)), False
    if kind in ("both_above", "both_above_incorrect"):
        return _blobs((0.40625, 0.5), (0.609375, 0.5), (0.5, 0.5)), False
    raise ValueError(f"unknown scenario kind {kind!r}")


_KIND_CYCLE: Tuple[Tuple[str, Entity, Status], ...] = (
    ("correct", Entity.ENTITY1, Status.CORRECT),
    ("incorrect", Entity.ENTITY1, Status.INCORRECT),
    ("neither", Entity.ENTITY1, Status.NEITHER),
    ("overlapped", Entity.ENTITY2, Status.OVERLAPPED),
    ("captioned", Entity.ENTITY1, Status.CAPTIONED),
    ("both_above", Entity.ENTITY1, Status.CORRECT),
    ("tie", Entity.ENTITY1, Status.NEITHER),
    ("both_above_incorrect", Entity.ENTITY2, Status.INCORRECT),
)


def synth_suite(count: int, seed: int, width: int = 64, height: int = 64) -> List[ScenarioSpec]:
    """A scenario list cycling through every status plus the
    both-above-threshold and exact-tie decision branches."""
    if count < 0:
        raise ValueError("count must be non-negative")
    specs = []
    for index in range(count):
        kind, gold, expected = _KIND_CYCLE[index % len(_KIND_CYCLE)]
        sseed = _derived_seed(seed, index)
        rng = np.random.Generator(np.random.Philox(key=np.array([sseed, 999], dtype=np.uint64)))
        # dyadic jitter (multiples of 1/64) keeps layouts exactly reproducible
        jitter = (int(rng.integers(-2, 3)) / 64, int(rng.integers(-2, 3)) / 64)
        blobs, captioned = _scenario_geometry(kind, jitter)
        e1 = _ENTITY_WORDS[index % len(_ENTITY_WORDS)]
        e2 = _ENTITY_WORDS[(index + 7) % len(_ENTITY_WORDS)]
        specs.append(ScenarioSpec(
            id=f"fx-{index:04d}",
            width=width,
            height=height,
            blobs=blobs,
            noise_amplitude=1.0,
            caption_flag=captioned,
            gold=gold,
            expected_status=expected,
            seed=sseed,
            tokens=(e1, e2, "it"),
        ))
    return specs


def suite_instance(spec: ScenarioSpec) -> WinoVisInstance:
    """A structurally valid instance whose answer matches the scenario's
    gold entity, so the bundles can drive the end-to-end pipeline."""
    e1, e2, pronoun = spec.tokens
    statement = f"The {e1} nudged the {e2} because it was restless."
    return WinoVisInstance(
        id=spec.id,
        statement=statement,
        pronoun=pronoun,
        snippet="it was restless",
        options=(e1, e2),
        answer=0 if spec.gold is Entity.ENTITY1 else 1,
        reason="synthetic scenario",
        entity_class=EntityClass.DISPARATE,
        context_type=ContextType.EMOTIONAL,
    )


def write_suite(out_dir, specs: Sequence[ScenarioSpec]) -> Dict[str, InstanceVerdict]:
    """Write bundles, the instances file, and the expected-verdict sidecar.

    Returns the expected verdict per instance id.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    bundle_dir = os.path.join(out_dir, "bundles")
    os.makedirs(bundle_dir, exist_ok=True)
    expected = {}
    instances = []
    for spec in specs:
        bundle, verdict = synth_bundle(spec)
        write_bundle_file(os.path.join(bundle_dir, f"{spec.id}.wvhm"), bundle)
        expected[spec.id] = verdict
        instances.append(suite_instance(spec))
    write_instances(os.path.join(out_dir, "instances.jsonl"), instances)
    lines = ["instance_id,expected_status"]
    lines += [f"{sid},{v.status.value}" for sid, v in sorted(expected.items())]
    atomic_write_text(os.path.join(out_dir, "expected.csv"), "\n".join(lines) + "\n")
    return expected
