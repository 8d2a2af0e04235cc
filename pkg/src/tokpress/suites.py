"""Randomized oracle battles: fast operators vs. brute-force references.

Each suite draws a fixed-seed stream of small random instances, runs the
production operator and the matching oracle from :mod:`tokpress.oracles`,
and checks the contract between them. The ``oracle`` CLI subcommand and
the regression tests both run these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracles, quant, spatial, temporal
from .model import ReductionMode, ReductionPlan, TokenSet, apply_plan, compose_plans
from .temporal import FrameSimSeries


@dataclass(frozen=True)
class SuiteReport:
    name: str
    passed: bool
    detail: str


def _tokens_from(data: np.ndarray) -> TokenSet:
    return TokenSet(data=data.astype(np.float32), frames=1, grid=(1, data.shape[0]))


def _divprune_instance(tokens: TokenSet, k: int, metric: str):
    """Run greedy and oracle on one instance.

    Returns (objective ratio, greedy seed pair, greedy kept set, optimal
    kept sets). The seed pair is recovered independently of the operator.
    """
    plan = spatial.divprune_select(tokens, spatial.Budget(count=k), metric)
    dist = spatial._pairwise_distance(tokens, metric)
    kept = plan.kept
    greedy_obj = min(dist[i][j] for i in kept for j in kept if i < j)
    best_obj, winners = oracles.exhaustive_maxmin_subsets(dist, k)
    ratio = greedy_obj / best_obj if best_obj > 0 else 1.0
    n = tokens.n_tokens
    iu, ju = np.triu_indices(n, k=1)
    flat = dist[iu, ju]
    hit = int(np.argmax(flat == flat.max()))
    pair = (int(iu[hit]), int(ju[hit]))
    return ratio, pair, kept, winners


def divprune_suite(n_instances: int = 200, seed: int = 0) -> SuiteReport:
    """Greedy max-min selection vs. exhaustive subset search.

    Strict stream (Euclidean, k <= 3, dims 2-4): the 0.6x approximation
    floor on every instance and set-level optimality whenever the greedy
    seed pair belongs to some optimum. At k <= 3 the set-match clause is
    a theorem: the seed pair is the exhaustive best pair and the one
    completion step maximizes the true objective.

    Extended stream (adds k = 4 and cosine distance): asserts the
    provable floors instead, 0.5x for metric distances and 0.25x for
    cosine (a squared chord, which squares the greedy guarantee). Greedy
    myopia makes the strict clauses genuinely false in this regime.
    """
    rng = np.random.default_rng(seed)
    worst_ratio = np.inf
    for _ in range(n_instances):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(2, 4))
        dim = int(rng.integers(2, 5))
        tokens = _tokens_from(rng.normal(size=(n, dim)))
        ratio, pair, kept, winners = _divprune_instance(tokens, k, "euclidean")
        worst_ratio = min(worst_ratio, ratio)
        if ratio < 0.6 - 1e-12:
            return SuiteReport("divprune", False, f"strict ratio {ratio:.3f} below 0.6")
        if any(pair[0] in w and pair[1] in w for w in winners) and kept not in winners:
            return SuiteReport(
                "divprune",
                False,
                f"seed pair {pair} lies in an optimum but greedy set {kept} is not optimal",
            )
    for _ in range(n_instances):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(2, min(4, n) + 1))
        dim = int(rng.integers(2, 5))
        tokens = _tokens_from(rng.normal(size=(n, dim)))
        metric = "euclidean" if rng.integers(2) else "cosine"
        ratio, pair, kept, winners = _divprune_instance(tokens, k, metric)
        floor = 0.5 if metric == "euclidean" else 0.25
        if ratio < floor - 1e-12:
            return SuiteReport(
                "divprune", False, f"extended {metric} k={k} ratio {ratio:.3f} below {floor}"
            )
        in_optimum = any(pair[0] in w and pair[1] in w for w in winners)
        if k <= 3 and in_optimum and kept not in winners:
            return SuiteReport(
                "divprune", False, f"k={k} seed pair {pair} in optimum, greedy missed it"
            )
    return SuiteReport(
        "divprune",
        True,
        f"{n_instances} strict instances (worst ratio {worst_ratio:.3f}) and "
        f"{n_instances} extended instances within provable floors",
    )


def segmentation_suite(n_instances: int = 200, seed: int = 0) -> SuiteReport:
    """DP segmentation vs. exhaustive partition enumeration (exact equality)."""
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        f = int(rng.integers(2, 9))
        m = int(rng.integers(1, min(4, f) + 1))
        series = FrameSimSeries(rng.uniform(-1.0, 1.0, size=f - 1))
        part = temporal.segment_dp(series, m)
        dp_obj = temporal.partition_objective(series, part)
        best_obj, best_ends = oracles.brute_force_partition(series, m)
        if dp_obj != best_obj:
            return SuiteReport(
                "segmentation", False, f"objective {dp_obj} != brute force {best_obj}"
            )
        if part.boundaries != best_ends:
            return SuiteReport(
                "segmentation",
                False,
                f"tie-break mismatch: {part.boundaries} vs {best_ends}",
            )
    return SuiteReport("segmentation", True, f"{n_instances} instances, exact matches")


def tome_suite(n_instances: int = 100, seed: int = 0) -> SuiteReport:
    """Bipartite merging removes exactly steps*r tokens; equal vectors are fixed points."""
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        n = int(rng.integers(2, 17))
        r = int(rng.integers(0, n // 2 + 1))
        feasible = 0
        cur = n
        while r > 0 and r <= cur // 2 and feasible < 3:
            feasible += 1
            cur -= r
        steps = int(rng.integers(1, feasible + 1)) if feasible else 1
        tokens = _tokens_from(rng.normal(size=(n, 4)))
        plan = spatial.tome_merge(tokens, r, steps)
        if plan.n_kept != n - steps * r:
            return SuiteReport(
                "tome", False, f"{n} tokens, r={r}, steps={steps}: kept {plan.n_kept}"
            )
    # fixed point: merging identical vectors
    vec = np.tile(np.array([[0.25, -1.5, 3.0]], dtype=np.float32), (2, 1))
    merged = apply_plan(_tokens_from(vec), spatial.tome_merge(_tokens_from(vec), 1, 1))
    drift = float(np.abs(merged.data[0] - vec[0]).max())
    if drift > 1e-7:
        return SuiteReport("tome", False, f"equal-vector merge drifted by {drift}")
    return SuiteReport("tome", True, f"{n_instances} instances, exact counts, drift {drift}")


def random_plan(rng: np.random.Generator, n: int) -> ReductionPlan:
    """Random valid plan over ``n`` tokens, mixing drops and merges."""
    kept_mask = rng.random(n) < 0.6
    if not kept_mask.any():
        kept_mask[int(rng.integers(n))] = True
    kept = [int(i) for i in np.flatnonzero(kept_mask)]
    rest = [int(i) for i in np.flatnonzero(~kept_mask)]
    merges: dict[int, list[int]] = {}
    dropped = 0
    for idx in rest:
        if rng.random() < 0.5:
            target = kept[int(rng.integers(len(kept)))]
            merges.setdefault(target, []).append(idx)
        else:
            dropped += 1
    merge_items = tuple((t, tuple(sorted(s))) for t, s in sorted(merges.items()))
    if merge_items and dropped:
        mode = ReductionMode.PRUNE_THEN_MERGE
    elif merge_items:
        mode = ReductionMode.MERGE
    else:
        mode = ReductionMode.PRUNE
    return ReductionPlan(n, tuple(kept), merge_items, mode)


def compose_suite(n_instances: int = 100, seed: int = 0) -> SuiteReport:
    """Sequential plan application equals the composed plan."""
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        n = int(rng.integers(2, 12))
        tokens = _tokens_from(rng.normal(size=(n, 3)))
        plan_a = random_plan(rng, n)
        mid = apply_plan(tokens, plan_a)
        plan_b = random_plan(rng, mid.n_tokens)
        stepwise = apply_plan(mid, plan_b)
        composed = apply_plan(tokens, compose_plans(plan_a, plan_b))
        if stepwise.token_ids.tolist() != composed.token_ids.tolist():
            return SuiteReport("compose", False, "kept sets differ")
        if not np.allclose(stepwise.data, composed.data, atol=1e-6):
            return SuiteReport("compose", False, "merged values differ")
        if not np.allclose(stepwise.weights, composed.weights, atol=1e-9):
            return SuiteReport("compose", False, "weights differ")
    return SuiteReport("compose", True, f"{n_instances} instances match")


def quant_suite(n_matrices: int = 100, seed: int = 0) -> SuiteReport:
    """Round-trip bound, Hessian sweep vs. RTN, smoothing identity, int8 matmul."""
    rng = np.random.default_rng(seed)
    specs = [
        quant.QuantSpec(bits=8, granularity="per-tensor"),
        quant.QuantSpec(bits=4, granularity="per-channel"),
        quant.QuantSpec(bits=8, granularity="group", group_size=4),
        quant.QuantSpec(bits=4, granularity="per-tensor", symmetric=False),
    ]
    for i in range(n_matrices):
        w = rng.normal(scale=rng.uniform(0.1, 5.0), size=(8, 6))
        spec = specs[i % len(specs)]
        ql = quant.quantize_rtn(w, spec)
        lo, hi = ql.representable_range()
        clamped = np.clip(w, lo, hi)
        scales = quant._expand(ql.scales, ql.shape, spec)
        err = np.abs(ql.dequantize() - clamped)
        if np.any(err > scales / 2 + 1e-6):
            return SuiteReport("quant", False, f"round-trip error exceeded on matrix {i}")
    gptq_wins = 0
    gptq_mse = rtn_mse = 0.0
    for s in range(20):
        local = np.random.default_rng(seed + 1000 + s)
        w = local.normal(size=(16, 16))
        x = local.normal(size=(64, 16))
        spec = quant.QuantSpec(bits=4, granularity="per-channel")
        g = quant.quant_eval(w, quant.gptq_quantize(w, x, spec).dequantize(), x).output_mse
        r = quant.quant_eval(w, quant.quantize_rtn(w, spec).dequantize(), x).output_mse
        gptq_mse += g
        rtn_mse += r
        gptq_wins += g <= r
    if gptq_mse > rtn_mse:
        return SuiteReport(
            "quant", False, f"hessian sweep mse {gptq_mse:.4f} > rtn {rtn_mse:.4f}"
        )
    x = rng.uniform(-1, 1, size=(32, 24))
    w = rng.uniform(-1, 1, size=(24, 12))
    s = quant.smooth_scales(np.abs(x).max(axis=0), w, 0.5)
    xs, ws = quant.apply_smoothing(x, w, s)
    ref = x @ w
    if np.linalg.norm(xs @ ws - ref) > 1e-10 * np.linalg.norm(ref):
        return SuiteReport("quant", False, "smoothing identity violated")
    rel = np.linalg.norm(quant.w8a8_matmul(x, w) - ref) / np.linalg.norm(ref)
    if rel > 0.01:
        return SuiteReport("quant", False, f"int8 matmul off by {rel:.4%}")
    return SuiteReport(
        "quant",
        True,
        f"{n_matrices} round trips ok, sweep<=rtn on {gptq_wins}/20 seeds "
        f"(mean {gptq_mse / 20:.5f} vs {rtn_mse / 20:.5f}), int8 matmul {rel:.4%}",
    )


SUITES = {
    "divprune": divprune_suite,
    "segmentation": segmentation_suite,
    "tome": tome_suite,
    "compose": compose_suite,
    "quant": quant_suite,
}


def run_suite(name: str, seed: int = 0) -> list[SuiteReport]:
    if name == "all":
        return [fn(seed=seed) for fn in SUITES.values()]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return [SUITES[name](seed=seed)]
