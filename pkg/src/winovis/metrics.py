"""Aggregate metrics over verdict lists.

Covers the binary suite (precision / recall / F1 / certainty), the
multi-class alternative that does not penalize ``neither`` outcomes, 2x2
confusion matrices, partition counts, per-category breakdowns, and the
pooled two-proportion Z-test used to compare models.

Metrics are computed on exact rationals and rendered to one-decimal
percentages with round-half-away-from-zero; a metric whose denominator is
zero is absent (``None``, rendered "N/A").
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Mapping, Optional, Sequence

from .corpus import WinoVisInstance
from .pipeline import Entity, InstanceVerdict, Status

__all__ = [
    "VerdictCounts",
    "ConfusionMatrix2",
    "BinaryMetrics",
    "MulticlassMetrics",
    "ZTestResult",
    "MetricsReport",
    "binary_metrics",
    "multiclass_metrics",
    "ztest_two_proportions",
    "ztest_for_metric",
    "proportion_pair",
    "build_report",
    "count_verdicts",
    "percent_str",
    "LOW_SUPPORT_MIN_DECISIONS",
]

LOW_SUPPORT_MIN_DECISIONS = 5


@dataclass(frozen=True)
class VerdictCounts:
    captioned: int = 0
    overlapped: int = 0
    correct: int = 0
    incorrect: int = 0
    neither: int = 0

    def __post_init__(self):
        for name in ("captioned", "overlapped", "correct", "incorrect", "neither"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} count must be non-negative")

    def evaluable(self) -> int:
        return self.correct + self.incorrect + self.neither

    def total(self) -> int:
        return self.evaluable() + self.captioned + self.overlapped

    def decisions(self) -> int:
        """Instances where the model committed to an entity."""
        return self.correct + self.incorrect


@dataclass(frozen=True)
class ConfusionMatrix2:
    """Rows are the true entity, columns the predicted one.

    c12 = true entity 1 predicted as entity 2, and so on.
    """

    c11: int = 0
    c12: int = 0
    c21: int = 0
    c22: int = 0

    def __post_init__(self):
        if min(self.c11, self.c12, self.c21, self.c22) < 0:
            raise ValueError("confusion counts must be non-negative")


@dataclass(frozen=True)
class BinaryMetrics:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    certainty: Optional[float]


@dataclass(frozen=True)
class MulticlassMetrics:
    accuracy: Optional[float]
    macro_precision: Optional[float]
    macro_recall: Optional[float]
    macro_f1: Optional[float]


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_two_sided: float


@dataclass(frozen=True)
class MetricsReport:
    counts: VerdictCounts
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    certainty: Optional[float]
    confusion: ConfusionMatrix2
    multiclass: MulticlassMetrics
    low_support: bool
    per_category: Dict[str, Dict[str, "MetricsReport"]] = field(default_factory=dict)


def _ratio(num: int, den: int) -> Optional[Fraction]:
    if den == 0:
        return None
    return Fraction(num, den)


def _pct(x: Optional[Fraction]) -> Optional[float]:
    return None if x is None else float(100 * x)


def percent_str(value: Optional[float], decimals: int = 1) -> str:
    """Render a percentage with round-half-away-from-zero; None -> N/A."""
    if value is None:
        return "N/A"
    scale = 10**decimals
    f = Fraction(value) * scale
    rounded = math.floor(f + Fraction(1, 2)) if f >= 0 else -math.floor(-f + Fraction(1, 2))
    return f"{rounded / scale:.{decimals}f}"


def binary_metrics(counts: VerdictCounts) -> BinaryMetrics:
    """Precision C/(C+I), recall C/(C+N), their harmonic mean, and certainty
    (C+I)/evaluable, as percentages. Zero denominators yield None."""
    c, i, n = counts.correct, counts.incorrect, counts.neither
    precision = _ratio(c, c + i)
    recall = _ratio(c, c + n)
    certainty = _ratio(c + i, counts.evaluable())
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return BinaryMetrics(_pct(precision), _pct(recall), _pct(f1), _pct(certainty))


def multiclass_metrics(
    correct_e1: int, correct_e2: int, wrong_pred_e1: int, wrong_pred_e2: int
) -> MulticlassMetrics:
    """Per-entity precision/recall averaged over both classes.

    ``wrong_pred_ei`` counts wrong predictions OF entity i (the true referent
    was the other entity). ``neither`` outcomes do not participate.
    """
    if min(correct_e1, correct_e2, wrong_pred_e1, wrong_pred_e2) < 0:
        raise ValueError("counts must be non-negative")
    predictions = correct_e1 + correct_e2 + wrong_pred_e1 + wrong_pred_e2
    accuracy = _ratio(correct_e1 + correct_e2, predictions)

    prec_e1 = _ratio(correct_e1, correct_e1 + wrong_pred_e1)
    prec_e2 = _ratio(correct_e2, correct_e2 + wrong_pred_e2)
    # true entity-1 instances were either predicted correctly or as entity 2
    rec_e1 = _ratio(correct_e1, correct_e1 + wrong_pred_e2)
    rec_e2 = _ratio(correct_e2, correct_e2 + wrong_pred_e1)

    def mean(a, b):
        return None if a is None or b is None else (a + b) / 2

    macro_p = mean(prec_e1, prec_e2)
    macro_r = mean(rec_e1, rec_e2)
    macro_f1 = None
    if macro_p is not None and macro_r is not None and (macro_p + macro_r) > 0:
        macro_f1 = 2 * macro_p * macro_r / (macro_p + macro_r)
    return MulticlassMetrics(_pct(accuracy), _pct(macro_p), _pct(macro_r), _pct(macro_f1))


def ztest_two_proportions(c1: int, n1: int, c2: int, n2: int) -> ZTestResult:
    """Pooled two-proportion Z-test; two-sided p via the normal survival
    function."""
    if n1 < 1 or n2 < 1:
        raise ValueError("sample sizes must be >= 1")
    if not (0 <= c1 <= n1 and 0 <= c2 <= n2):
        raise ValueError("successes must lie in [0, n]")
    pooled = Fraction(c1 + c2, n1 + n2)
    if pooled == 0 or pooled == 1:
        raise ValueError("degenerate proportions")
    se = math.sqrt(float(pooled * (1 - pooled) * (Fraction(1, n1) + Fraction(1, n2))))
    z = float(Fraction(c1, n1) - Fraction(c2, n2)) / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return ZTestResult(z, p)


def proportion_pair(counts: VerdictCounts, metric: str) -> tuple:
    """(successes, trials) for a proportion-shaped metric.

    F1 is not a proportion, so no two-proportion test is defined for it and
    asking for one is an error.
    """
    c = counts
    pairs = {
        "precision": (c.correct, c.decisions()),
        "recall": (c.correct, c.correct + c.neither),
        "certainty": (c.decisions(), c.evaluable()),
    }
    if metric not in pairs:
        raise ValueError(
            f"no two-proportion test for {metric!r}; choose from {sorted(pairs)}"
        )
    return pairs[metric]


def ztest_for_metric(a: VerdictCounts, b: VerdictCounts, metric: str) -> ZTestResult:
    """Compare one proportion-shaped metric between two verdict multisets."""
    c1, n1 = proportion_pair(a, metric)
    c2, n2 = proportion_pair(b, metric)
    return ztest_two_proportions(c1, n1, c2, n2)


_STATUS_FIELD = {
    Status.CAPTIONED: "captioned",
    Status.OVERLAPPED: "overlapped",
    Status.CORRECT: "correct",
    Status.INCORRECT: "incorrect",
    Status.NEITHER: "neither",
}


def count_verdicts(verdicts: Sequence[InstanceVerdict]) -> VerdictCounts:
    tally = {name: 0 for name in _STATUS_FIELD.values()}
    for v in verdicts:
        tally[_STATUS_FIELD[v.status]] += 1
    return VerdictCounts(**tally)


def _confusion(verdicts: Sequence[InstanceVerdict]) -> ConfusionMatrix2:
    cells = {"c11": 0, "c12": 0, "c21": 0, "c22": 0}
    for v in verdicts:
        if v.predicted is None:
            continue
        # gold is implied by the verdict itself: correct means gold==predicted
        gold = v.predicted if v.status is Status.CORRECT else v.predicted.other()
        row = 1 if gold is Entity.ENTITY1 else 2
        col = 1 if v.predicted is Entity.ENTITY1 else 2
        cells[f"c{row}{col}"] += 1
    return ConfusionMatrix2(**cells)


def _single_report(verdicts: Sequence[InstanceVerdict]) -> MetricsReport:
    counts = count_verdicts(verdicts)
    bm = binary_metrics(counts)
    confusion = _confusion(verdicts)
    mc = multiclass_metrics(confusion.c11, confusion.c22, confusion.c21, confusion.c12)
    return MetricsReport(
        counts=counts,
        precision=bm.precision,
        recall=bm.recall,
        f1=bm.f1,
        certainty=bm.certainty,
        confusion=confusion,
        multiclass=mc,
        low_support=counts.decisions() < LOW_SUPPORT_MIN_DECISIONS,
    )


def build_report(
    verdicts: Sequence[InstanceVerdict],
    instances: Mapping[str, WinoVisInstance],
) -> MetricsReport:
    """Full report: overall metrics plus entity-class and context-type
    sub-reports (each bucket partitions the verdict list)."""
    missing = sorted({v.instance_id for v in verdicts if v.instance_id not in instances})
    if missing:
        raise KeyError(f"unknown instance id(s): {', '.join(missing)}")
    for v in verdicts:
        if v.predicted is None:
            continue
        gold = v.predicted if v.status is Status.CORRECT else v.predicted.other()
        declared = Entity.ENTITY1 if instances[v.instance_id].answer == 0 else Entity.ENTITY2
        if gold is not declared:
            raise ValueError(
                f"verdict for {v.instance_id} is inconsistent with the instance's answer"
            )

    report = _single_report(verdicts)

    def bucketed(key_fn) -> Dict[str, MetricsReport]:
        buckets: Dict[str, list] = {}
        for v in verdicts:
            buckets.setdefault(key_fn(instances[v.instance_id]), []).append(v)
        return {name: _single_report(vs) for name, vs in sorted(buckets.items())}

    per_category = {
        "entity_class": bucketed(
            lambda inst: inst.entity_class.group() if inst.entity_class else "untagged"
        ),
        "context_type": bucketed(
            lambda inst: inst.context_type.value if inst.context_type else "untagged"
        ),
    }
    return MetricsReport(
        counts=report.counts,
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        certainty=report.certainty,
        confusion=report.confusion,
        multiclass=report.multiclass,
        low_support=report.low_support,
        per_category=per_category,
    )
