"""The four-stage verdict pipeline.

Per instance: (1) drop human-flagged captioned images, (2) threshold each
term's heatmap at the 90th percentile into a binary mask, (3) discard the
instance when the two entity masks overlap too much to attribute anything,
(4) pick the referent whose mask overlaps the pronoun's mask beyond the
decision boundary.

All threshold comparisons are strict (>): a score must exceed a boundary to
count. An exact tie between both entities' pronoun IoUs yields ``neither``
since no entity has the higher score.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .grid import Heatmap2D, iou, threshold_mask

__all__ = [
    "Entity",
    "Status",
    "PipelineConfig",
    "InstanceVerdict",
    "evaluate_instance",
    "evaluate_batch",
    "ROLE_ENTITY1",
    "ROLE_ENTITY2",
    "ROLE_PRONOUN",
]

ROLE_ENTITY1 = "entity1"
ROLE_ENTITY2 = "entity2"
ROLE_PRONOUN = "pronoun"


class Entity(enum.Enum):
    ENTITY1 = "entity1"
    ENTITY2 = "entity2"

    def other(self) -> "Entity":
        return Entity.ENTITY2 if self is Entity.ENTITY1 else Entity.ENTITY1


class Status(enum.Enum):
    CAPTIONED = "captioned"
    OVERLAPPED = "overlapped"
    CORRECT = "correct"
    INCORRECT = "incorrect"
    NEITHER = "neither"


@dataclass(frozen=True)
class PipelineConfig:
    """Thresholds for the verdict pipeline."""

    quantile_q: float = 0.9
    overlap_threshold: float = 0.4
    decision_threshold: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.quantile_q < 1.0:
            raise ValueError("quantile_q must lie in (0, 1)")
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must lie in [0, 1]")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ValueError("decision_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class InstanceVerdict:
    """Pipeline outcome for one instance plus the IoUs that produced it."""

    instance_id: str
    status: Status
    predicted: Optional[Entity] = None
    iou_entities: Optional[float] = None
    iou_pronoun_e1: Optional[float] = None
    iou_pronoun_e2: Optional[float] = None

    def __post_init__(self):
        decided = self.status in (Status.CORRECT, Status.INCORRECT)
        if decided != (self.predicted is not None):
            raise ValueError("predicted must be present exactly for correct/incorrect verdicts")
        if self.status is Status.CAPTIONED and self.iou_entities is not None:
            raise ValueError("captioned verdicts carry no IoU values")


def evaluate_instance(
    instance_id: str,
    heatmaps: Mapping[str, Heatmap2D],
    gold: Entity,
    caption_flag: bool,
    cfg: PipelineConfig = PipelineConfig(),
) -> InstanceVerdict:
    """Run the full pipeline on one instance.

    ``heatmaps`` maps the roles ``entity1``, ``entity2`` and ``pronoun`` to
    their aggregated heatmaps (identical dims required).
    """
    if caption_flag:
        return InstanceVerdict(instance_id, Status.CAPTIONED)

    missing = [r for r in (ROLE_ENTITY1, ROLE_ENTITY2, ROLE_PRONOUN) if r not in heatmaps]
    if missing:
        raise ValueError(f"missing heatmap for role(s): {', '.join(missing)}")
    hm_e1 = heatmaps[ROLE_ENTITY1]
    hm_e2 = heatmaps[ROLE_ENTITY2]
    hm_pr = heatmaps[ROLE_PRONOUN]
    dims = {(h.width, h.height) for h in (hm_e1, hm_e2, hm_pr)}
    if len(dims) > 1:
        raise ValueError(f"heatmap dims differ across roles: {sorted(dims)}")

    mask_e1 = threshold_mask(hm_e1, cfg.quantile_q)
    mask_e2 = threshold_mask(hm_e2, cfg.quantile_q)
    iou_entities = iou(mask_e1, mask_e2)
    if iou_entities > cfg.overlap_threshold:
        return InstanceVerdict(instance_id, Status.OVERLAPPED, iou_entities=iou_entities)

    mask_pr = threshold_mask(hm_pr, cfg.quantile_q)
    s1 = iou(mask_pr, mask_e1)
    s2 = iou(mask_pr, mask_e2)

    predicted: Optional[Entity] = None
    if s1 > cfg.decision_threshold and s2 > cfg.decision_threshold:
        if s1 != s2:
            predicted = Entity.ENTITY1 if s1 > s2 else Entity.ENTITY2
        # exact tie: no entity has the higher score
    elif s1 > cfg.decision_threshold:
        predicted = Entity.ENTITY1
    elif s2 > cfg.decision_threshold:
        predicted = Entity.ENTITY2

    if predicted is None:
        status = Status.NEITHER
    elif predicted is gold:
        status = Status.CORRECT
    else:
        status = Status.INCORRECT
    return InstanceVerdict(
        instance_id,
        status,
        predicted=predicted,
        iou_entities=iou_entities,
        iou_pronoun_e1=s1,
        iou_pronoun_e2=s2,
    )


def evaluate_batch(
    bundles: Sequence[tuple],
    golds: Mapping[str, Entity],
    cfg: PipelineConfig = PipelineConfig(),
) -> list:
    """Evaluate (instance_id, heatmaps, caption_flag) triples in input order."""
    unknown = [bid for bid, _, _ in bundles if bid not in golds]
    if unknown:
        raise KeyError(f"no gold answer for instance(s): {', '.join(sorted(unknown))}")
    return [
        evaluate_instance(bid, hm, golds[bid], flag, cfg) for bid, hm, flag in bundles
    ]
