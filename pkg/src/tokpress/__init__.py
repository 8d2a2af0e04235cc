"""tokpress: token compression for dumped vision-language tensors.

The engine operates on token dumps (see :mod:`tokpress.dumpio`) rather
than live models. Reduction operators score tokens
(:mod:`tokpress.metrics`), build declarative plans
(:mod:`tokpress.spatial`, :mod:`tokpress.temporal`), and apply them in
one place (:func:`tokpress.model.apply_plan`). Post-training
quantization (:mod:`tokpress.quant`) and the evaluation harness
(:mod:`tokpress.evalharness`) round out the pipeline, driven either
programmatically, through the sklearn-style estimators
(:mod:`tokpress.estimators`), or via the ``tokpress`` CLI.
"""

from .model import (
    AttentionBundle,
    ReductionMode,
    ReductionPlan,
    SegmentPartition,
    TokenSet,
    apply_plan,
    compose_plans,
    identity_plan,
)
from .dumpio import (
    read_dump,
    read_matrix,
    read_weight_dump,
    write_dump,
    write_matrix,
    write_weight_dump,
)
from .metrics import (
    ScoreSource,
    ScoreVector,
    SimMatrix,
    TextReduce,
    cls_scores,
    cosine_sim,
    redundancy_scores,
    text_scores,
)
from .spatial import (
    Budget,
    divprune_select,
    dominant_contextual,
    prune_then_merge,
    prune_topk,
    tome_merge,
    vispruner_select,
    window_merge,
)
from .temporal import (
    FrameSimSeries,
    RateReport,
    frame_similarity,
    partition_objective,
    rate_report,
    segment_dp,
    segment_fixed,
    segment_threshold,
    temporal_merge,
    temporal_prune,
)
from .quant import (
    Granularity,
    QuantScope,
    QuantSpec,
    QuantizedLinear,
    apply_smoothing,
    gptq_quantize,
    quant_eval,
    quantize_rtn,
    smooth_scales,
    w8a8_matmul,
)
from .evalharness import (
    AggregateResult,
    BenchScore,
    CostEstimate,
    CostModel,
    DialogueTask,
    MultiTurnRecord,
    aggregate,
    build_pairs,
    conditional_accuracy,
    cost_estimate,
    emit_report,
)
from .pipeline import PipelineConfig, load_config, parse_config, run

__version__ = "0.1.0"

__all__ = [
    "AttentionBundle", "ReductionMode", "ReductionPlan", "SegmentPartition",
    "TokenSet", "apply_plan", "compose_plans", "identity_plan",
    "read_dump", "read_matrix", "read_weight_dump",
    "write_dump", "write_matrix", "write_weight_dump",
    "ScoreSource", "ScoreVector", "SimMatrix", "TextReduce",
    "cls_scores", "cosine_sim", "redundancy_scores", "text_scores",
    "Budget", "divprune_select", "dominant_contextual", "prune_then_merge",
    "prune_topk", "tome_merge", "vispruner_select", "window_merge",
    "FrameSimSeries", "RateReport", "frame_similarity", "partition_objective",
    "rate_report", "segment_dp", "segment_fixed", "segment_threshold",
    "temporal_merge", "temporal_prune",
    "Granularity", "QuantScope", "QuantSpec", "QuantizedLinear",
    "apply_smoothing", "gptq_quantize", "quant_eval", "quantize_rtn",
    "smooth_scales", "w8a8_matmul",
    "AggregateResult", "BenchScore", "CostEstimate", "CostModel",
    "DialogueTask", "MultiTurnRecord", "aggregate", "build_pairs",
    "conditional_accuracy", "cost_estimate", "emit_report",
    "PipelineConfig", "load_config", "parse_config", "run",
    "__version__",
]
