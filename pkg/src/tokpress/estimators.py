"""Scikit-learn style wrappers around the functional operators.

Reducers follow the transformer contract: ``fit`` computes a
:class:`~tokpress.model.ReductionPlan` (exposed as ``plan_``) and
``transform`` applies it, so they compose with ``get_params`` /
``set_params`` / ``clone`` and can sit inside wider tooling. The
functional API in :mod:`tokpress.spatial` and friends stays the
source of truth; these classes only hold parameters.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import metrics, quant, spatial, temporal
from .model import ReductionPlan, TokenSet, apply_plan
from .validation import check_bundle, check_scores, check_token_set


class _PlanReducer(BaseEstimator, TransformerMixin):
    """Shared fit/transform plumbing for plan-producing reducers."""

    plan_: ReductionPlan

    def _build_plan(self, tokens: TokenSet, bundle) -> ReductionPlan:
        raise NotImplementedError

    def fit(self, X, y=None, bundle=None):
        tokens = check_token_set(X)
        self.n_tokens_ = tokens.n_tokens
        self.plan_ = self._build_plan(tokens, bundle)
        return self

    def transform(self, X) -> TokenSet:
        if not hasattr(self, "plan_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        return apply_plan(check_token_set(X), self.plan_)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)


def _resolve_scores(tokens: TokenSet, bundle, source: str, text_reduce: str) -> metrics.ScoreVector:
    if source == "cls":
        return metrics.cls_scores(check_bundle(bundle, tokens))
    if source == "text":
        return metrics.text_scores(check_bundle(bundle, tokens), text_reduce)
    if source == "redundancy":
        return metrics.redundancy_scores(metrics.cosine_sim(tokens))
    raise ValueError(f"unknown score source {source!r}")


class TopKPruner(_PlanReducer):
    """Keep the k highest-importance tokens."""

    def __init__(self, k=None, ratio=None, score_source="cls", text_reduce="mean"):
        self.k = k
        self.ratio = ratio
        self.score_source = score_source
        self.text_reduce = text_reduce

    def _build_plan(self, tokens, bundle):
        scores = _resolve_scores(tokens, bundle, self.score_source, self.text_reduce)
        check_scores(scores, tokens)
        return spatial.prune_topk(scores, spatial.Budget(self.k, self.ratio))


class DiversityPruner(_PlanReducer):
    """Greedy max-min diversity pruning."""

    def __init__(self, k=None, ratio=None, metric="cosine"):
        self.k = k
        self.ratio = ratio
        self.metric = metric

    def _build_plan(self, tokens, bundle):
        return spatial.divprune_select(tokens, spatial.Budget(self.k, self.ratio), self.metric)


class BipartiteMerger(_PlanReducer):
    """Progressive bipartite soft matching merger."""

    def __init__(self, r_per_step=1, steps=1):
        self.r_per_step = r_per_step
        self.steps = steps

    def _build_plan(self, tokens, bundle):
        return spatial.tome_merge(tokens, self.r_per_step, self.steps)


class WindowMerger(_PlanReducer):
    """Collapse uniform spatial windows into their top-left token."""

    def __init__(self, window_h=3, window_w=3, sim_threshold=0.9):
        self.window_h = window_h
        self.window_w = window_w
        self.sim_threshold = sim_threshold

    def _build_plan(self, tokens, bundle):
        return spatial.window_merge(tokens, (self.window_h, self.window_w), self.sim_threshold)


class DominantContextualReducer(_PlanReducer):
    """Prune to dominant tokens, merge the rest into contextual seeds."""

    def __init__(self, k_dominant=1, k_contextual=1, score_source="cls", text_reduce="mean"):
        self.k_dominant = k_dominant
        self.k_contextual = k_contextual
        self.score_source = score_source
        self.text_reduce = text_reduce

    def _build_plan(self, tokens, bundle):
        scores = _resolve_scores(tokens, bundle, self.score_source, self.text_reduce)
        check_scores(scores, tokens)
        return spatial.dominant_contextual(tokens, scores, self.k_dominant, self.k_contextual)


class TemporalReducer(_PlanReducer):
    """Segment a video, then merge or prune within segments."""

    def __init__(
        self,
        segmentation="fixed",
        segment_length: Optional[int] = None,
        threshold: Optional[float] = None,
        max_segments: Optional[int] = None,
        merge_rate=0.5,
        reduce="merge",
    ):
        self.segmentation = segmentation
        self.segment_length = segment_length
        self.threshold = threshold
        self.max_segments = max_segments
        self.merge_rate = merge_rate
        self.reduce = reduce

    def _build_plan(self, tokens, bundle):
        if self.segmentation == "fixed":
            if self.segment_length is None:
                raise ValueError("fixed segmentation needs segment_length")
            partition = temporal.segment_fixed(tokens.frames, self.segment_length)
        elif self.segmentation == "threshold":
            if self.threshold is None:
                raise ValueError("threshold segmentation needs threshold")
            series = temporal.frame_similarity(tokens)
            partition = temporal.segment_threshold(series, self.threshold)
        elif self.segmentation == "dp":
            if self.max_segments is None:
                raise ValueError("dp segmentation needs max_segments")
            series = temporal.frame_similarity(tokens)
            partition = temporal.segment_dp(series, self.max_segments)
        else:
            raise ValueError(f"unknown segmentation {self.segmentation!r}")
        self.partition_ = partition
        if self.reduce == "merge":
            return temporal.temporal_merge(tokens, partition, self.merge_rate)
        if self.reduce == "prune":
            return temporal.temporal_prune(tokens, partition, self.merge_rate)
        raise ValueError(f"unknown reduce mode {self.reduce!r}")


class RtnQuantizer(BaseEstimator, TransformerMixin):
    """Round-to-nearest weight quantizer; transform returns the reconstruction."""

    def __init__(self, bits=8, granularity="per-tensor", group_size=None, symmetric=True):
        self.bits = bits
        self.granularity = granularity
        self.group_size = group_size
        self.symmetric = symmetric

    def _spec(self) -> quant.QuantSpec:
        return quant.QuantSpec(
            bits=self.bits,
            granularity=self.granularity,
            group_size=self.group_size,
            symmetric=self.symmetric,
        )

    def fit(self, X=None, y=None):
        return self

    def transform(self, W) -> np.ndarray:
        self.quantized_ = quant.quantize_rtn(np.asarray(W), self._spec())
        return self.quantized_.dequantize()


class GptqQuantizer(RtnQuantizer):
    """Hessian-compensated weight quantizer calibrated on activations."""

    def __init__(self, bits=4, granularity="per-channel", group_size=None, symmetric=True):
        super().__init__(bits, granularity, group_size, symmetric)

    def fit(self, X, y=None):
        self.calibration_ = np.asarray(X, dtype=np.float64)
        return self

    def transform(self, W) -> np.ndarray:
        if not hasattr(self, "calibration_"):
            raise NotFittedError("GptqQuantizer needs calibration activations")
        self.quantized_ = quant.gptq_quantize(np.asarray(W), self.calibration_, self._spec())
        return self.quantized_.dequantize()
