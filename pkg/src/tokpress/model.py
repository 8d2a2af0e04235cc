"""Core domain types: token grids, attention evidence, and reduction plans.

A :class:`TokenSet` is a frame-indexed grid of d-dimensional embeddings.
Global token indices are frame-major: the token at spatial slot ``idx`` of
frame ``n`` has index ``idx + n * H * W``. Every reduction operator in the
package emits a declarative :class:`ReductionPlan`; :func:`apply_plan` is
the single place plans are executed.

All types are immutable after construction (arrays are marked read-only)
and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyResult,
    IndexOutOfRange,
    NonFiniteValue,
    OverlappingGroups,
    ShapeMismatch,
)

_ROW_SUM_TOL = 1e-4  # slack for dumped softmax rows


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class ReductionMode(str, Enum):
    """How a plan disposes of non-kept tokens."""

    PRUNE = "prune"
    MERGE = "merge"
    PRUNE_THEN_MERGE = "prune_then_merge"


@dataclass(frozen=True)
class TokenSet:
    """Immutable grid of token embeddings with merge-lineage bookkeeping.

    Parameters
    ----------
    data : (n_tokens, dim) float32 matrix, row-major.
    frames : number of frames F >= 1.
    grid : (rows, cols) per frame. A freshly dumped set has
        ``n_tokens == frames * rows * cols``.
    token_ids : strictly increasing original indices. ``None`` means the
        set is fresh (full grid, ids ``0..n-1``).
    weights : per-token merge mass (count of original tokens absorbed),
        all >= 1. Defaults to ones.
    """

    data: np.ndarray
    frames: int
    grid: tuple[int, int]
    token_ids: np.ndarray = None  # type: ignore[assignment]
    weights: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        data = _frozen_array(self.data, np.float32)
        if data.ndim != 2:
            raise ShapeMismatch(f"token data must be 2-D, got {data.ndim}-D")
        n = data.shape[0]
        h, w = (int(self.grid[0]), int(self.grid[1]))
        f = int(self.frames)
        if f < 1 or h < 1 or w < 1:
            raise ShapeMismatch("frames and grid dims must be >= 1")
        capacity = f * h * w
        if self.token_ids is None:
            if n != capacity:
                raise ShapeMismatch(
                    f"fresh token set needs frames*rows*cols == n_tokens "
                    f"({f}*{h}*{w} != {n})"
                )
            ids = _frozen_array(np.arange(n), np.int64)
        else:
            ids = _frozen_array(self.token_ids, np.int64)
            if ids.shape != (n,):
                raise ShapeMismatch("token_ids length must match token count")
            if n and (ids[0] < 0 or ids[-1] >= capacity):
                raise IndexOutOfRange("token_ids outside original grid range")
            if n > 1 and not np.all(np.diff(ids) > 0):
                raise ShapeMismatch("token_ids must be strictly increasing")
        if self.weights is None:
            wts = _frozen_array(np.ones(n), np.float64)
        else:
            wts = _frozen_array(self.weights, np.float64)
            if wts.shape != (n,):
                raise ShapeMismatch("weights length must match token count")
            if not np.all(np.isfinite(wts)):
                raise NonFiniteValue("weights must be finite")
            if np.any(wts < 1.0):
                raise ShapeMismatch("weights must be >= 1")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "grid", (h, w))
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "weights", wts)

    # -- layout helpers ----------------------------------------------------

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def tokens_per_frame(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def capacity(self) -> int:
        """Token count of the original full grid this set descends from."""
        return self.frames * self.tokens_per_frame

    @property
    def is_full_grid(self) -> bool:
        return self.n_tokens == self.capacity

    def frame_of(self, token_id) -> np.ndarray:
        return np.asarray(token_id) // self.tokens_per_frame

    def slot_of(self, token_id) -> np.ndarray:
        return np.asarray(token_id) % self.tokens_per_frame


@dataclass(frozen=True)
class AttentionBundle:
    """Per-token attention evidence dumped alongside a token set.

    ``cls_to_patch`` is the classifier-token attention over patches;
    ``text_to_visual`` holds one row per text token. Present rows must be
    nonnegative and sum to at most ``1 + 1e-4`` (dumped softmax rows over
    the visual positions).
    """

    cls_to_patch: Optional[np.ndarray] = None
    text_to_visual: Optional[np.ndarray] = None
    source_layer: int = -1

    def __post_init__(self):
        cls = self.cls_to_patch
        if cls is not None:
            cls = _frozen_array(cls, np.float64)
            _check_attention_rows(cls.reshape(1, -1), "cls_to_patch")
            object.__setattr__(self, "cls_to_patch", cls)
        txt = self.text_to_visual
        if txt is not None:
            txt = _frozen_array(txt, np.float64)
            if txt.ndim != 2 or txt.shape[0] < 1:
                raise ShapeMismatch("text_to_visual must be (n_text, n_tokens)")
            _check_attention_rows(txt, "text_to_visual")
            object.__setattr__(self, "text_to_visual", txt)
        object.__setattr__(self, "source_layer", int(self.source_layer))

    @property
    def n_text(self) -> int:
        return 0 if self.text_to_visual is None else self.text_to_visual.shape[0]

    def check_matches(self, tokens: TokenSet) -> None:
        n = tokens.n_tokens
        if self.cls_to_patch is not None and self.cls_to_patch.shape != (n,):
            raise ShapeMismatch(
                f"cls attention covers {self.cls_to_patch.shape[0]} tokens, set has {n}"
            )
        if self.text_to_visual is not None and self.text_to_visual.shape[1] != n:
            raise ShapeMismatch(
                f"text attention covers {self.text_to_visual.shape[1]} tokens, set has {n}"
            )


def _check_attention_rows(rows: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(rows)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    if np.any(rows < 0):
        raise ShapeMismatch(f"{name} must be nonnegative")
    sums = rows.sum(axis=1)
    if np.any(sums <= 0) or np.any(sums > 1.0 + _ROW_SUM_TOL):
        raise ShapeMismatch(f"{name} rows must sum to a value in (0, 1+{_ROW_SUM_TOL}]")


@dataclass(frozen=True)
class ReductionPlan:
    """Declarative outcome of a reduction operator.

    ``kept`` lists surviving token indices (current positions, sorted).
    ``merges`` groups ``(target, sources)`` fold sources into a kept
    target. Prune-mode plans carry no merges; merge-mode plans account
    for every non-kept index as a source.
    """

    n_tokens: int
    kept: tuple[int, ...]
    merges: tuple[tuple[int, tuple[int, ...]], ...] = ()
    mode: ReductionMode = ReductionMode.PRUNE

    def __post_init__(self):
        n = int(self.n_tokens)
        kept = tuple(int(i) for i in self.kept)
        merges = tuple(
            (int(t), tuple(int(s) for s in sources)) for t, sources in self.merges
        )
        object.__setattr__(self, "n_tokens", n)
        object.__setattr__(self, "kept", kept)
        object.__setattr__(self, "merges", merges)
        object.__setattr__(self, "mode", ReductionMode(self.mode))
        if not kept:
            raise EmptyResult("plan retains zero tokens")
        kept_set = set(kept)
        if len(kept_set) != len(kept) or list(kept) != sorted(kept):
            raise OverlappingGroups("kept indices must be sorted and unique")
        if kept[0] < 0 or kept[-1] >= n:
            raise IndexOutOfRange(f"kept index outside 0..{n - 1}")
        sources_seen: set[int] = set()
        for target, sources in merges:
            if target not in kept_set:
                raise OverlappingGroups(f"merge target {target} is not kept")
            for s in sources:
                if s < 0 or s >= n:
                    raise IndexOutOfRange(f"merge source {s} outside 0..{n - 1}")
                if s in kept_set:
                    raise OverlappingGroups(f"merge source {s} is also kept")
                if s in sources_seen:
                    raise OverlappingGroups(f"merge source {s} used twice")
                sources_seen.add(s)
        if self.mode is ReductionMode.PRUNE and merges:
            raise OverlappingGroups("prune-mode plan cannot carry merges")
        if self.mode is ReductionMode.MERGE:
            if len(kept) + len(sources_seen) != n:
                raise OverlappingGroups(
                    "merge-mode plan must account for every token as kept or source"
                )

    @property
    def n_kept(self) -> int:
        return len(self.kept)

    @property
    def dropped(self) -> tuple[int, ...]:
        """Indices neither kept nor merged anywhere."""
        used = set(self.kept)
        for _, sources in self.merges:
            used.update(sources)
        return tuple(i for i in range(self.n_tokens) if i not in used)


def identity_plan(n_tokens: int, mode: ReductionMode = ReductionMode.PRUNE) -> ReductionPlan:
    """Plan that keeps every token untouched."""
    return ReductionPlan(n_tokens, tuple(range(n_tokens)), (), mode)


def apply_plan(tokens: TokenSet, plan: ReductionPlan) -> TokenSet:
    """Execute a plan: drop pruned tokens, fold merge groups into targets.

    Each merge target becomes the weight-weighted mean of itself and its
    sources; its weight becomes the sum of participating weights. Survivors
    stay in ascending original-index order. Pure and deterministic.
    """
    if plan.n_tokens != tokens.n_tokens:
        raise IndexOutOfRange(
            f"plan built for {plan.n_tokens} tokens, set has {tokens.n_tokens}"
        )
    kept = np.asarray(plan.kept, dtype=np.int64)
    new_data = tokens.data[kept].astype(np.float64)
    new_weights = tokens.weights[kept].copy()
    if plan.merges:
        pos = {idx: i for i, idx in enumerate(plan.kept)}
        for target, sources in plan.merges:
            if not sources:
                continue
            i = pos[target]
            src = np.asarray(sources, dtype=np.int64)
            w_src = tokens.weights[src]
            total = new_weights[i] + w_src.sum()
            blended = (
                new_data[i] * new_weights[i]
                + (tokens.data[src].astype(np.float64) * w_src[:, None]).sum(axis=0)
            ) / total
            new_data[i] = blended
            new_weights[i] = total
    return TokenSet(
        data=new_data.astype(np.float32),
        frames=tokens.frames,
        grid=tokens.grid,
        token_ids=tokens.token_ids[kept],
        weights=new_weights,
    )


def compose_plans(first: ReductionPlan, second: ReductionPlan) -> ReductionPlan:
    """Reference composer: one plan equivalent to applying ``first`` then ``second``.

    ``second`` is expressed in the index space of ``first``'s output. If
    ``second`` drops a token that absorbed sources under ``first``, those
    sources are dropped with it (their mass vanished with the merged token).
    """
    if second.n_tokens != first.n_kept:
        raise IndexOutOfRange(
            f"second plan built for {second.n_tokens} tokens, first keeps {first.n_kept}"
        )
    kept1 = list(first.kept)
    groups: dict[int, set[int]] = {t: set(s) for t, s in first.merges if s}

    final_kept = [kept1[i] for i in second.kept]
    for target2, sources2 in second.merges:
        t = kept1[target2]
        bucket = groups.setdefault(t, set())
        for s2 in sources2:
            s = kept1[s2]
            bucket.add(s)
            bucket.update(groups.pop(s, ()))
    kept_set = set(final_kept)
    merges = tuple(
        (t, tuple(sorted(groups[t]))) for t in sorted(groups) if t in kept_set and groups[t]
    )
    source_count = sum(len(s) for _, s in merges)
    has_drops = len(final_kept) + source_count < first.n_tokens
    if merges and has_drops:
        mode = ReductionMode.PRUNE_THEN_MERGE
    elif merges:
        mode = ReductionMode.MERGE
    else:
        mode = ReductionMode.PRUNE
    return ReductionPlan(first.n_tokens, tuple(sorted(final_kept)), merges, mode)


@dataclass(frozen=True)
class SegmentPartition:
    """Ordered, disjoint half-open frame ranges covering ``[0, F)``."""

    segments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        segs = tuple((int(s), int(e)) for s, e in self.segments)
        if not segs:
            raise ShapeMismatch("partition needs at least one segment")
        if segs[0][0] != 0:
            raise ShapeMismatch("first segment must start at frame 0")
        for (s, e), (s2, _) in zip(segs, segs[1:] + ((segs[-1][1], 0),)):
            if e <= s:
                raise ShapeMismatch(f"segment [{s},{e}) is empty")
            if s2 != e:
                raise ShapeMismatch("segments must be contiguous")
        object.__setattr__(self, "segments", segs)

    @property
    def n_frames(self) -> int:
        return self.segments[-1][1]

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def boundaries(self) -> tuple[int, ...]:
        """Segment end frames, the canonical tie-break representation."""
        return tuple(e for _, e in self.segments)

    @staticmethod
    def from_boundaries(ends: Sequence[int]) -> "SegmentPartition":
        starts = [0] + list(ends[:-1])
        return SegmentPartition(tuple(zip(starts, ends)))
