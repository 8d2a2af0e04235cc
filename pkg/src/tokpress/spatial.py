"""Spatial prune/merge operators for a single image or frame set.

Every operator returns a :class:`ReductionPlan`; nothing mutates tokens.
Ties break toward lower original index throughout, so identical inputs
always produce identical plans.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import counters
from .errors import (
    BudgetClampedWarning,
    BudgetExceedsTokens,
    InvalidParameter,
    RTooLarge,
)
from .metrics import ScoreVector, cosine_sim, unit_rows
from .model import ReductionMode, ReductionPlan, TokenSet, identity_plan


@dataclass(frozen=True)
class Budget:
    """Target token count, absolute (``count``) or as a ratio of input size."""

    count: Optional[int] = None
    ratio: Optional[float] = None

    def __post_init__(self):
        if (self.count is None) == (self.ratio is None):
            raise InvalidParameter("budget needs exactly one of count or ratio")
        if self.count is not None and self.count < 1:
            raise InvalidParameter("budget count must be >= 1")
        if self.ratio is not None and not (0.0 < self.ratio <= 1.0):
            raise InvalidParameter("budget ratio must be in (0, 1]")

    def resolve(self, n_tokens: int) -> int:
        """Concrete k for ``n_tokens`` input tokens; clamps with a warning."""
        if self.count is not None:
            k = self.count
        else:
            k = max(1, int(np.floor(self.ratio * n_tokens + 0.5)))
        if k > n_tokens:
            warnings.warn(
                f"budget {k} exceeds {n_tokens} tokens; clamped",
                BudgetClampedWarning,
                stacklevel=2,
            )
            k = n_tokens
        return k


def _topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores, ties broken toward lower index."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def prune_topk(scores: ScoreVector, budget: Budget) -> ReductionPlan:
    """Keep the k highest-scoring tokens, drop the rest."""
    n = len(scores)
    k = budget.resolve(n)
    kept = _topk_indices(scores.scores, k)
    return ReductionPlan(n, tuple(kept), (), ReductionMode.PRUNE)


def _pairwise_distance(tokens: TokenSet, metric: str) -> np.ndarray:
    if metric == "cosine":
        return 1.0 - cosine_sim(tokens).values
    if metric == "euclidean":
        x = tokens.data.astype(np.float64)
        sq = np.sum(x * x, axis=1)
        counters.add(counters.SIM_EVALS, tokens.n_tokens ** 2)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.maximum(d2, 0.0, out=d2)
        return np.sqrt(d2)
    raise InvalidParameter(f"unknown distance metric {metric!r}")


def divprune_select(tokens: TokenSet, budget: Budget, metric: str = "cosine") -> ReductionPlan:
    """Greedy max-min diversity (farthest-point) pruning.

    Seeds with the pair attaining maximum pairwise distance (lowest-index
    pair on ties), then repeatedly adds the token whose minimum distance
    to the selected set is largest. ``k == 1`` falls back to the
    highest-norm token.
    """
    n = tokens.n_tokens
    k = budget.resolve(n)
    if k == n:
        return identity_plan(n)
    if k < 2:
        norms = np.linalg.norm(tokens.data.astype(np.float64), axis=1)
        kept = (int(np.argmax(norms)),)
        return ReductionPlan(n, kept, (), ReductionMode.PRUNE)
    dist = _pairwise_distance(tokens, metric)
    iu, ju = np.triu_indices(n, k=1)
    flat = dist[iu, ju]
    best = flat.max()
    hit = int(np.argmax(flat == best))  # first (i, j) in row-major order = lex smallest
    selected = [int(iu[hit]), int(ju[hit])]
    min_dist = np.minimum(dist[selected[0]], dist[selected[1]])
    chosen = np.zeros(n, dtype=bool)
    chosen[selected] = True
    while len(selected) < k:
        masked = np.where(chosen, -np.inf, min_dist)
        nxt = int(np.argmax(masked))  # argmax returns the first maximum: low-index tie-break
        selected.append(nxt)
        chosen[nxt] = True
        min_dist = np.minimum(min_dist, dist[nxt])
    return ReductionPlan(n, tuple(sorted(selected)), (), ReductionMode.PRUNE)


def tome_merge(tokens: TokenSet, r_per_step: int, steps: int = 1) -> ReductionPlan:
    """Progressive bipartite soft matching.

    Each step splits the current order into even-position set A and
    odd-position set B, links every A token to its most similar B token,
    and folds the ``r`` highest-similarity links (A side into B side).
    Steps compose into a single merge-mode plan.
    """
    if r_per_step < 0 or steps < 0:
        raise InvalidParameter("r_per_step and steps must be nonnegative")
    n = tokens.n_tokens
    if r_per_step == 0 or steps == 0:
        return identity_plan(n, ReductionMode.MERGE)
    # live state, indexed by original token id
    vectors = tokens.data.astype(np.float64).copy()
    weights = tokens.weights.copy()
    order = list(range(n))
    groups: dict[int, set[int]] = {}
    for _ in range(steps):
        cur = len(order)
        if r_per_step > cur // 2:
            raise RTooLarge(f"r={r_per_step} exceeds half of {cur} tokens")
        a_ids = order[0::2]
        b_ids = order[1::2]
        unit, zero = unit_rows(vectors[order])
        ua, ub = unit[0::2], unit[1::2]
        counters.add(counters.SIM_EVALS, len(a_ids) * len(b_ids))
        sim = ua @ ub.T
        za, zb = zero[0::2], zero[1::2]
        if za.any():
            sim[za, :] = 0.0
        if zb.any():
            sim[:, zb] = 0.0
        best_b = np.argmax(sim, axis=1)  # first max: low-index tie-break
        best_sim = sim[np.arange(len(a_ids)), best_b]
        link_rank = np.argsort(-best_sim, kind="stable")[:r_per_step]
        merged_a: set[int] = set()
        for a_pos in link_rank:
            a = a_ids[a_pos]
            b = b_ids[int(best_b[a_pos])]
            total = weights[a] + weights[b]
            vectors[b] = (vectors[b] * weights[b] + vectors[a] * weights[a]) / total
            weights[b] = total
            bucket = groups.setdefault(b, set())
            bucket.add(a)
            bucket.update(groups.pop(a, ()))
            merged_a.add(a)
        order = [t for t in order if t not in merged_a]
    kept = tuple(sorted(order))
    merges = tuple((t, tuple(sorted(groups[t]))) for t in sorted(groups))
    return ReductionPlan(n, kept, merges, ReductionMode.MERGE)


def window_merge(tokens: TokenSet, window: tuple[int, int], sim_threshold: float) -> ReductionPlan:
    """Merge uniform non-overlapping windows into their top-left token.

    A window collapses only if every pairwise cosine similarity inside it
    meets ``sim_threshold``; bitwise-equal token pairs pass any threshold,
    so a threshold above 1 means "exactly equal windows only". Works on
    reduced sets too: windows consider the tokens still present, and the
    merge target is the lowest-index survivor in the window.
    """
    wh, ww = int(window[0]), int(window[1])
    if wh < 1 or ww < 1:
        raise InvalidParameter("window dims must be >= 1")
    h, w = tokens.grid
    per_frame = tokens.tokens_per_frame
    ids = tokens.token_ids
    rows = (ids % per_frame) // w
    cols = (ids % per_frame) % w
    frames = ids // per_frame
    # bucket current positions by (frame, window row, window col)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for pos in range(tokens.n_tokens):
        key = (int(frames[pos]), int(rows[pos]) // wh, int(cols[pos]) // ww)
        buckets.setdefault(key, []).append(pos)
    unit, zero = unit_rows(tokens.data)
    kept = list(range(tokens.n_tokens))
    merges = []
    for key in sorted(buckets):
        members = buckets[key]
        if len(members) < 2:
            continue
        block = unit[members]
        counters.add(counters.SIM_EVALS, len(members) ** 2)
        sim = block @ block.T
        raw = tokens.data[members]
        ok = True
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                equal = np.array_equal(raw[i], raw[j])
                s = 0.0 if (zero[members[i]] or zero[members[j]]) else min(sim[i, j], 1.0)
                if not equal and s < sim_threshold:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            target, *sources = members  # members are position-sorted: top-left first
            merges.append((target, tuple(sources)))
            for s in sources:
                kept.remove(s)
    return ReductionPlan(tokens.n_tokens, tuple(kept), tuple(merges), ReductionMode.MERGE)


def dominant_contextual(
    tokens: TokenSet,
    scores: ScoreVector,
    k_dominant: int,
    k_contextual: int,
) -> ReductionPlan:
    """Keep dominant tokens untouched, agglomerate the rest into contextual seeds.

    The top ``k_dominant`` tokens by score survive as-is. Among the
    leftovers, the ``k_contextual`` highest-scoring become seeds and each
    remaining token merges into its most-similar seed.
    """
    n = tokens.n_tokens
    if k_dominant < 0 or k_contextual < 0:
        raise InvalidParameter("group sizes must be nonnegative")
    if k_dominant + k_contextual > n:
        raise BudgetExceedsTokens(
            f"k_dominant + k_contextual = {k_dominant + k_contextual} > {n} tokens"
        )
    if k_dominant + k_contextual == 0:
        raise BudgetExceedsTokens("at least one token must be retained")
    if k_contextual == 0:
        return prune_topk(scores, Budget(count=k_dominant))
    dominant = _topk_indices(scores.scores, k_dominant) if k_dominant else np.empty(0, np.int64)
    leftover_mask = np.ones(n, dtype=bool)
    leftover_mask[dominant] = False
    leftovers = np.flatnonzero(leftover_mask)
    seed_local = _topk_indices(scores.scores[leftovers], min(k_contextual, len(leftovers)))
    seeds = leftovers[seed_local]
    rest = np.setdiff1d(leftovers, seeds, assume_unique=True)
    merges = []
    if len(rest):
        unit, zero = unit_rows(tokens.data)
        counters.add(counters.SIM_EVALS, len(rest) * len(seeds))
        sim = unit[rest] @ unit[seeds].T
        sim[zero[rest], :] = 0.0
        sim[:, zero[seeds]] = 0.0
        assign = np.argmax(sim, axis=1)  # first max: lowest seed index on ties
        by_seed: dict[int, list[int]] = {}
        for tok, a in zip(rest, assign):
            by_seed.setdefault(int(seeds[a]), []).append(int(tok))
        merges = [(s, tuple(sorted(group))) for s, group in sorted(by_seed.items())]
    kept = tuple(sorted(np.concatenate([dominant, seeds]).astype(int)))
    return ReductionPlan(n, kept, tuple(merges), ReductionMode.PRUNE_THEN_MERGE)


def prune_then_merge(
    tokens: TokenSet, keep_plan: ReductionPlan, merge_dropped: bool
) -> ReductionPlan:
    """Optionally reattach a prune plan's dropped tokens as merge sources.

    With ``merge_dropped`` each dropped token folds into its most-similar
    kept token (lowest kept index on ties); otherwise the plan passes
    through unchanged.
    """
    if keep_plan.mode is not ReductionMode.PRUNE:
        raise InvalidParameter("keep_plan must be a prune-mode plan")
    if not merge_dropped:
        return keep_plan
    dropped = keep_plan.dropped
    if not dropped:
        return ReductionPlan(keep_plan.n_tokens, keep_plan.kept, (), ReductionMode.PRUNE_THEN_MERGE)
    kept = np.asarray(keep_plan.kept)
    drop = np.asarray(dropped)
    unit, zero = unit_rows(tokens.data)
    counters.add(counters.SIM_EVALS, len(drop) * len(kept))
    sim = unit[drop] @ unit[kept].T
    sim[zero[drop], :] = 0.0
    sim[:, zero[kept]] = 0.0
    assign = np.argmax(sim, axis=1)
    by_target: dict[int, list[int]] = {}
    for tok, a in zip(drop, assign):
        by_target.setdefault(int(kept[a]), []).append(int(tok))
    merges = tuple((t, tuple(sorted(g))) for t, g in sorted(by_target.items()))
    return ReductionPlan(keep_plan.n_tokens, keep_plan.kept, merges, ReductionMode.PRUNE_THEN_MERGE)


def vispruner_select(
    tokens: TokenSet,
    scores: ScoreVector,
    k_attention: int,
    k_diverse: int,
    metric: str = "cosine",
) -> ReductionPlan:
    """Experimental attention+diversity hybrid pruner.

    Keeps ``k_attention`` tokens by score, then runs diversity selection
    over the remainder for ``k_diverse`` more. Exposed for ablation; the
    split between the two budgets is not standardized.
    """
    n = tokens.n_tokens
    if k_attention + k_diverse > n:
        raise BudgetExceedsTokens(f"{k_attention}+{k_diverse} exceeds {n} tokens")
    if k_attention + k_diverse == 0:
        raise BudgetExceedsTokens("at least one token must be retained")
    top = _topk_indices(scores.scores, k_attention)
    kept = set(int(i) for i in top)
    if k_diverse:
        rest = np.array(sorted(set(range(n)) - kept), dtype=np.int64)
        sub = TokenSet(
            data=tokens.data[rest],
            frames=tokens.frames,
            grid=tokens.grid,
            token_ids=tokens.token_ids[rest],
            weights=tokens.weights[rest],
        )
        sub_plan = divprune_select(sub, Budget(count=k_diverse), metric=metric)
        kept.update(int(rest[i]) for i in sub_plan.kept)
    return ReductionPlan(n, tuple(sorted(kept)), (), ReductionMode.PRUNE)
