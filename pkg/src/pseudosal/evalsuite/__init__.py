from .ablation import FLAGS, AblationPlan, AblationResult, predict_split, run_ablations
from .metrics import (
    MetricsReport,
    MetricsRow,
    adaptive_threshold,
    combine_runs,
    evaluate,
    label_quality_curve,
    max_f_score,
    oracle_label_fusion,
    per_image_scores,
    rank_correlation,
)
from .report import REFERENCE_FOOTER, emit_report

__all__ = [
    "FLAGS", "REFERENCE_FOOTER", "AblationPlan", "AblationResult", "MetricsReport", "MetricsRow",
    "adaptive_threshold", "combine_runs", "emit_report", "evaluate", "label_quality_curve", "max_f_score",
    "oracle_label_fusion", "per_image_scores", "predict_split", "rank_correlation", "run_ablations",
]
