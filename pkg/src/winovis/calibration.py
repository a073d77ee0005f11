"""Threshold calibration against human labels.

Sweeps a threshold grid and scores how often the rule ``iou > threshold``
agrees with a human yes/no judgment, then picks the smallest threshold with
maximal agreement. The comparison is strict (>) to match the decision
pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

__all__ = [
    "LabeledPair",
    "agreement_curve",
    "select_threshold",
    "default_grid",
]


@dataclass(frozen=True)
class LabeledPair:
    instance_id: str
    iou_value: float
    human_positive: bool

    def __post_init__(self):
        if not 0.0 <= self.iou_value <= 1.0:
            raise ValueError("iou_value must lie in [0, 1]")


def default_grid(step: float = 0.05) -> List[float]:
    """0.00 .. 1.00 inclusive; 0.05 steps resolve 0.4 cleanly."""
    n = round(1.0 / step)
    return [round(i * step, 10) for i in range(n + 1)]


def agreement_curve(
    pairs: Sequence[LabeledPair], thresholds: Sequence[float]
) -> List[Tuple[float, float]]:
    """Fraction of pairs where (iou > threshold) matches the human label,
    for each threshold on an ascending grid."""
    if not pairs:
        raise ValueError("no labeled pairs")
    if len(thresholds) == 0:
        raise ValueError("empty threshold grid")
    grid = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("thresholds must be strictly ascending")
    ious = np.array([p.iou_value for p in pairs])
    labels = np.array([p.human_positive for p in pairs])
    return [(t, float(np.mean((ious > t) == labels))) for t in grid]


def select_threshold(curve: Sequence[Tuple[float, float]]) -> float:
    """Smallest threshold achieving the maximal agreement."""
    if not curve:
        raise ValueError("empty agreement curve")
    best = max(a for _, a in curve)
    return min(t for t, a in curve if a == best)
