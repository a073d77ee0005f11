"""Evaluation framework for pronoun disambiguation in text-to-image models.

Turns per-token cross-attention data into attribution heatmaps, applies a
threshold/IoU decision pipeline to judge which referent a model associated
with an ambiguous pronoun, aggregates the reported metrics, calibrates the
IoU thresholds against human labels, and builds Winograd-style corpora via
an LLM prompt cycle.
"""
from .grid import BinaryMask, Heatmap2D, bicubic_upscale, iou, quantile, threshold_mask
from .attribution import (
    AttentionSlice,
    AttentionStack,
    TokenHeatmapSet,
    aggregate_all,
    aggregate_token_heatmap,
    normalize_for_display,
)
from .pipeline import (
    Entity,
    InstanceVerdict,
    PipelineConfig,
    Status,
    evaluate_batch,
    evaluate_instance,
)
from .metrics import (
    ConfusionMatrix2,
    MetricsReport,
    VerdictCounts,
    binary_metrics,
    build_report,
    multiclass_metrics,
    ztest_two_proportions,
)
from .calibration import LabeledPair, agreement_curve, select_threshold
from .corpus import (
    PromptTemplate,
    WinoVisInstance,
    build_prompt,
    parse_batch,
    redundancy_scan,
    run_cycle,
    validate_instance,
    validate_pair,
)
from .bundle_io import BundleFormatError, HeatmapBundle, read_bundle, write_bundle

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Heatmap2D",
    "bicubic_upscale",
    "iou",
    "quantile",
    "threshold_mask",
    "AttentionSlice",
    "AttentionStack",
    "TokenHeatmapSet",
    "aggregate_all",
    "aggregate_token_heatmap",
    "normalize_for_display",
    "Entity",
    "InstanceVerdict",
    "PipelineConfig",
    "Status",
    "evaluate_batch",
    "evaluate_instance",
    "ConfusionMatrix2",
    "MetricsReport",
    "VerdictCounts",
    "binary_metrics",
    "build_report",
    "multiclass_metrics",
    "ztest_two_proportions",
    "LabeledPair",
    "agreement_curve",
    "select_threshold",
    "PromptTemplate",
    "WinoVisInstance",
    "build_prompt",
    "parse_batch",
    "redundancy_scan",
    "run_cycle",
    "validate_instance",
    "validate_pair",
    "BundleFormatError",
    "HeatmapBundle",
    "read_bundle",
    "write_bundle",
]
