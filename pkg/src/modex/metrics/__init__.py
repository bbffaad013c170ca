from .alignment import (
    DEFAULT_PERCENTILES,
    OverlapResult,
    contrast_heat,
    contrast_heat_z,
    iou_auc,
    iou_curve,
    pixel_ap,
    topk_overlap,
)
from .faithfulness import (
    StabilityResult,
    aopc,
    aopc_curve,
    chunk_sizes,
    coverage,
    l0,
    perturbation_path,
    spearman,
    spearman_stability,
)
from .report import MetricReport, aggregate, summarize

__all__ = [
    "DEFAULT_PERCENTILES", "OverlapResult", "contrast_heat", "contrast_heat_z", "iou_auc",
    "iou_curve", "pixel_ap", "topk_overlap", "StabilityResult", "aopc", "aopc_curve",
    "chunk_sizes", "coverage", "l0", "perturbation_path", "spearman", "spearman_stability",
    "MetricReport", "aggregate", "summarize",
]
