"""Two-step video reduction: segment frames, then reduce within segments.

Temporal redundancy lives at matching spatial slots of consecutive
frames, so all cross-frame comparisons here pair token ``idx`` of frame
``n`` with token ``idx`` of frame ``n+1`` (global indices differ by one
frame stride). Segmentation strategies produce a
:class:`~tokpress.model.SegmentPartition`; the reducers share one
candidate ranking so merge and prune are directly comparable.

The dynamic-programming segmenter runs in exact rational arithmetic:
objective values and tie-breaks are then independent of summation order,
which makes the optimum reproducible against exhaustive enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import counters
from .errors import InvalidParameter, NoGrid, ShapeMismatch, SingleFrame
from .metrics import unit_rows
from .model import (
    ReductionMode,
    ReductionPlan,
    SegmentPartition,
    TokenSet,
    identity_plan,
)


@dataclass(frozen=True)
class FrameSimSeries:
    """Mean same-slot cosine similarity between consecutive frames.

    Entry ``i`` compares frames ``i`` and ``i+1``; a video with F frames
    yields F-1 entries.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeMismatch("similarity series must be a vector")
        if np.any(v < -1.0 - 1e-9) or np.any(v > 1.0 + 1e-9):
            raise ShapeMismatch("similarity values must lie in [-1, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0] + 1

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RateReport:
    """Token accounting for one reduced sample.

    Retention is stored as exact counts so ``rr * original_tokens``
    reproduces the surviving count without floating-point slack.
    """

    original_tokens: int
    final_tokens: int
    merge_rate: Optional[float] = None
    segment_time: float = 0.0
    prefill_proxy: float = 0.0

    def __post_init__(self):
        if self.original_tokens < 1 or not (0 < self.final_tokens <= self.original_tokens):
            raise ShapeMismatch("token counts must satisfy 0 < final <= original")

    @property
    def rr(self) -> Fraction:
        """Retention rate, exact."""
        return Fraction(self.final_tokens, self.original_tokens)

    @property
    def rr_float(self) -> float:
        return self.final_tokens / self.original_tokens


def _require_full_grid(video: TokenSet) -> None:
    if not video.is_full_grid:
        raise NoGrid("operation needs the full frame grid; token set was reduced")


def frame_similarity(video: TokenSet) -> FrameSimSeries:
    """Adjacent-frame similarity averaged over spatial slots."""
    _require_full_grid(video)
    f = video.frames
    if f < 2:
        raise SingleFrame("need at least two frames")
    per = video.tokens_per_frame
    unit, zero = unit_rows(video.data)
    unit = unit.reshape(f, per, -1)
    zero = zero.reshape(f, per)
    counters.add(counters.SIM_EVALS, (f - 1) * per)
    sims = np.einsum("fpd,fpd->fp", unit[:-1], unit[1:])
    sims = np.clip(sims, -1.0, 1.0)
    sims[zero[:-1] | zero[1:]] = 0.0
    return FrameSimSeries(sims.mean(axis=1))


def segment_fixed(n_frames: int, length: int) -> SegmentPartition:
    """Equal-length segments; the final one may be shorter."""
    if length < 1:
        raise InvalidParameter("segment length must be >= 1")
    if n_frames < 1:
        raise InvalidParameter("need at least one frame")
    ends = list(range(length, n_frames, length)) + [n_frames]
    return SegmentPartition.from_boundaries(ends)


def segment_threshold(series: FrameSimSeries, tau: float) -> SegmentPartition:
    """Cut after frame ``i`` wherever adjacent similarity drops below ``tau``."""
    if not (-1.0 < tau < 1.0):
        raise InvalidParameter("tau must be in (-1, 1)")
    ends = [i + 1 for i, v in enumerate(series.values) if v < tau]
    ends.append(series.n_frames)
    return SegmentPartition.from_boundaries(ends)


def _exact_prefix(series: FrameSimSeries) -> list[Fraction]:
    prefix = [Fraction(0)]
    for v in series.values:
        prefix.append(prefix[-1] + Fraction(float(v)))
    return prefix


def _segment_gain(prefix: list[Fraction], start: int, end: int) -> Fraction:
    """Mean adjacent similarity inside [start, end); singletons score 1."""
    pairs = end - start - 1
    if pairs == 0:
        return Fraction(1)
    return (prefix[end - 1] - prefix[start]) / pairs


def partition_objective(series: FrameSimSeries, partition: SegmentPartition) -> Fraction:
    """Exact objective value of a partition under the DP criterion."""
    prefix = _exact_prefix(series)
    return sum((_segment_gain(prefix, s, e) for s, e in partition.segments), Fraction(0))


def segment_dp(series: FrameSimSeries, max_segments: int) -> SegmentPartition:
    """Exact optimal partition into at most ``max_segments`` segments.

    Maximizes the sum over segments of mean intra-segment adjacent
    similarity (singletons contribute 1); ties resolve toward the
    lexicographically smallest boundary list. O(F^2 * max_segments) cell
    relaxations, counted under ``dp_cells``.
    """
    f = series.n_frames
    if not (1 <= max_segments <= f):
        raise InvalidParameter(f"max_segments must be in 1..{f}")
    prefix = _exact_prefix(series)
    # best[j][i]: max objective covering frames[i:] with at most j segments
    minus_inf = Fraction(-10 ** 9)
    best: list[list[Fraction]] = [[minus_inf] * (f + 1) for _ in range(max_segments + 1)]
    for j in range(max_segments + 1):
        best[j][f] = Fraction(0)
    for j in range(1, max_segments + 1):
        for i in range(f - 1, -1, -1):
            acc = best[j - 1][i]
            for end in range(i + 1, f + 1):
                counters.add(counters.DP_CELLS)
                cand = _segment_gain(prefix, i, end) + best[j - 1][end]
                if cand > acc:
                    acc = cand
            best[j][i] = acc
    # lexicographically smallest boundary list among optima: take the
    # earliest feasible end at every level
    ends: list[int] = []
    i, j = 0, max_segments
    while i < f:
        for end in range(i + 1, f + 1):
            if _segment_gain(prefix, i, end) + best[j - 1][end] == best[j][i]:
                ends.append(end)
                i, j = end, j - 1
                break
        else:  # pragma: no cover - unreachable with exact arithmetic
            raise AssertionError("DP reconstruction failed")
    return SegmentPartition.from_boundaries(ends)


def _select_temporal(
    video: TokenSet, partition: SegmentPartition, merge_rate: float
) -> tuple[list[int], dict[int, list[int]]]:
    """Shared candidate selection for temporal merge and prune.

    The merge rate is the per-segment fraction of non-anchor (non-first-
    frame) tokens to remove, ranked by similarity to the first frame's
    token at the same slot. Merge and prune remove identical candidates,
    so their retention always matches.
    """
    _require_full_grid(video)
    if not (0.0 <= merge_rate < 1.0):
        raise InvalidParameter("merge rate must be in [0, 1)")
    if partition.n_frames != video.frames:
        raise ShapeMismatch("partition does not cover this video's frames")
    per = video.tokens_per_frame
    removed: list[int] = []
    anchors: dict[int, list[int]] = {}
    if merge_rate == 0.0:
        return removed, anchors
    unit, zero = unit_rows(video.data)
    unit = unit.reshape(video.frames, per, -1)
    zero = zero.reshape(video.frames, per)
    for start, end in partition.segments:
        span = end - start
        if span < 2:
            continue
        n_candidates = (span - 1) * per
        quota = int(np.floor(merge_rate * n_candidates + 1e-9))
        if quota == 0:
            continue
        entries: list[tuple[float, int]] = []
        for frame in range(start + 1, end):
            counters.add(counters.SIM_EVALS, per)
            sims = np.einsum("pd,pd->p", unit[frame], unit[start])
            sims = np.where(zero[frame] | zero[start], 0.0, np.clip(sims, -1.0, 1.0))
            base = frame * per
            entries.extend((-float(sims[slot]), base + slot) for slot in range(per))
        entries.sort()
        for _, idx in entries[:quota]:
            removed.append(idx)
            slot = idx % per
            anchors.setdefault(start * per + slot, []).append(idx)
    return removed, anchors


def temporal_merge(
    video: TokenSet, partition: SegmentPartition, merge_rate: float
) -> ReductionPlan:
    """Fold redundant non-anchor tokens into the first frame of their segment.

    Within each segment, the most anchor-similar ``merge_rate`` fraction
    of non-first-frame tokens merges into the first frame's token at the
    same spatial slot.
    """
    removed, anchors = _select_temporal(video, partition, merge_rate)
    n = video.n_tokens
    if not removed:
        return identity_plan(n, ReductionMode.MERGE)
    gone = set(removed)
    kept = tuple(i for i in range(n) if i not in gone)
    merges = tuple((t, tuple(sorted(s))) for t, s in sorted(anchors.items()))
    return ReductionPlan(n, kept, merges, ReductionMode.MERGE)


def temporal_prune(
    video: TokenSet, partition: SegmentPartition, merge_rate: float
) -> ReductionPlan:
    """Drop the same candidates :func:`temporal_merge` would fold."""
    removed, _ = _select_temporal(video, partition, merge_rate)
    n = video.n_tokens
    if not removed:
        return identity_plan(n, ReductionMode.PRUNE)
    gone = set(removed)
    kept = tuple(i for i in range(n) if i not in gone)
    return ReductionPlan(n, kept, (), ReductionMode.PRUNE)


def rate_report(
    plan: ReductionPlan,
    original_n: int,
    merge_rate: Optional[float] = None,
    segment_time: float = 0.0,
    prefill_proxy: float = 0.0,
) -> RateReport:
    """Token accounting for a plan over ``original_n`` input tokens."""
    if plan.n_tokens != original_n:
        raise ShapeMismatch(f"plan covers {plan.n_tokens} tokens, reported {original_n}")
    return RateReport(
        original_tokens=original_n,
        final_tokens=plan.n_kept,
        merge_rate=merge_rate,
        segment_time=segment_time,
        prefill_proxy=prefill_proxy,
    )
