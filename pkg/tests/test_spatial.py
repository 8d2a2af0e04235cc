import numpy as np
import pytest

from tokpress.errors import (
    BudgetClampedWarning,
    BudgetExceedsTokens,
    InvalidParameter,
    RTooLarge,
)
from tokpress.metrics import ScoreSource, ScoreVector, cls_scores, cosine_sim
from tokpress.model import AttentionBundle, ReductionMode, apply_plan, identity_plan
from tokpress.spatial import (
    Budget,
    divprune_select,
    dominant_contextual,
    prune_then_merge,
    prune_topk,
    tome_merge,
    vispruner_select,
    window_merge,
)

from conftest import make_tokens


def scores_of(values) -> ScoreVector:
    return ScoreVector(np.asarray(values, dtype=float), ScoreSource.CLS_ATTENTION)


class TestBudget:
    def test_exactly_one_of_count_ratio(self):
        with pytest.raises(InvalidParameter):
            Budget()
        with pytest.raises(InvalidParameter):
            Budget(count=2, ratio=0.5)

    def test_ratio_range(self):
        with pytest.raises(InvalidParameter):
            Budget(ratio=0.0)
        with pytest.raises(InvalidParameter):
            Budget(ratio=1.5)

    def test_ratio_resolution(self):
        assert Budget(ratio=1 / 3).resolve(576) == 192
        assert Budget(ratio=1.0).resolve(7) == 7

    def test_overflow_clamps_with_warning(self):
        with pytest.warns(BudgetClampedWarning):
            assert Budget(count=10).resolve(4) == 4


class TestPruneTopK:
    def test_keeps_top_scores(self):
        plan = prune_topk(scores_of([0.1, 0.5, 0.3]), Budget(count=2))
        assert plan.kept == (1, 2)
        assert plan.mode is ReductionMode.PRUNE

    def test_ties_break_low_index(self):
        plan = prune_topk(scores_of([0.2, 0.2, 0.2, 0.2]), Budget(count=2))
        assert plan.kept == (0, 1)

    def test_full_budget_is_identity(self):
        plan = prune_topk(scores_of([0.25] * 4), Budget(count=4))
        assert plan == identity_plan(4)

    def test_monotone_transform_invariance(self, rng):
        raw = rng.normal(size=10)
        a = prune_topk(scores_of(raw), Budget(count=4))
        b = prune_topk(scores_of(np.exp(raw * 2.0)), Budget(count=4))
        assert a.kept == b.kept


class TestDivPrune:
    def test_one_dimensional_euclidean(self):
        t = make_tokens([[0.0], [1.0], [10.0]])
        plan = divprune_select(t, Budget(count=2), metric="euclidean")
        assert plan.kept == (0, 2)

    def test_full_budget_is_identity(self, rng):
        t = make_tokens(rng.normal(size=(5, 3)))
        assert divprune_select(t, Budget(count=5)) == identity_plan(5)

    def test_orthogonal_ties_pick_lowest_pair(self):
        t = make_tokens(np.eye(3))
        plan = divprune_select(t, Budget(count=2))
        assert plan.kept == (0, 1)

    def test_k1_falls_back_to_highest_norm(self):
        t = make_tokens([[1.0, 0.0], [3.0, 0.0], [0.5, 0.0]])
        plan = divprune_select(t, Budget(count=1))
        assert plan.kept == (1,)


class TestTomeMerge:
    def test_duplicate_pair_merges_first(self):
        t = make_tokens([[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        plan = tome_merge(t, r_per_step=1, steps=1)
        assert plan.kept == (1, 2, 3)
        assert plan.merges == ((1, (0,)),)
        assert plan.mode is ReductionMode.MERGE

    def test_r_zero_is_identity(self, rng):
        t = make_tokens(rng.normal(size=(6, 3)))
        plan = tome_merge(t, 0, steps=3)
        assert plan.kept == tuple(range(6))
        assert plan.merges == ()

    def test_two_identical_tokens_collapse(self):
        t = make_tokens([[2.0, -1.0], [2.0, -1.0]])
        plan = tome_merge(t, 1, 1)
        out = apply_plan(t, plan)
        assert out.n_tokens == 1
        assert out.data[0].tolist() == [2.0, -1.0]
        assert out.weights[0] == 2.0

    def test_r_too_large(self):
        t = make_tokens(np.eye(4))
        with pytest.raises(RTooLarge):
            tome_merge(t, 3, 1)

    def test_progressive_steps_reduce_exactly(self, rng):
        t = make_tokens(rng.normal(size=(12, 4)))
        plan = tome_merge(t, 2, steps=3)
        assert plan.n_kept == 12 - 6


class TestWindowMerge:
    def test_uniform_window_collapses(self):
        t = make_tokens(np.ones((4, 3)), frames=1, grid=(2, 2))
        plan = window_merge(t, (2, 2), 0.9)
        out = apply_plan(t, plan)
        assert out.n_tokens == 1
        assert out.weights[0] == 4.0
        assert out.token_ids.tolist() == [0]  # top-left survivor

    def test_mixed_window_untouched(self):
        data = np.ones((4, 2))
        data[3] = [0.0, 1.0]
        data[:3, 1] = 0.0
        t = make_tokens(data, frames=1, grid=(2, 2))
        plan = window_merge(t, (2, 2), 0.9)
        assert plan == identity_plan(4, ReductionMode.MERGE)

    def test_threshold_above_one_merges_only_exact_equals(self):
        exact = make_tokens(np.ones((4, 2)), frames=1, grid=(2, 2))
        plan = window_merge(exact, (2, 2), 1.0 + 1e-9)
        assert plan.n_kept == 1
        near = np.ones((4, 2))
        near[1, 0] = 1.0 + 1e-6  # cosine-identical but not bit-equal
        plan2 = window_merge(make_tokens(near, frames=1, grid=(2, 2)), (2, 2), 1.0 + 1e-9)
        assert plan2.n_kept == 4

    def test_ragged_edges(self):
        t = make_tokens(np.ones((6, 2)), frames=1, grid=(2, 3))
        plan = window_merge(t, (2, 2), 0.5)
        # windows: cols 0-1 (4 tokens) and ragged col 2 (2 tokens)
        assert plan.n_kept == 2
        assert plan.kept == (0, 2)

    def test_reduced_set_windows_use_survivors(self):
        t = make_tokens(np.ones((8, 2)), frames=2, grid=(2, 2))
        from tokpress.model import ReductionPlan

        reduced = apply_plan(t, ReductionPlan(8, (0, 1, 3, 4), (), "prune"))
        plan = window_merge(reduced, (2, 2), 0.9)
        out = apply_plan(reduced, plan)
        # frame 0 window merges the 3 survivors; frame 1 window is a singleton
        assert out.token_ids.tolist() == [0, 4]
        assert out.weights.tolist() == [3.0, 1.0]


class TestDominantContextual:
    def test_zero_contextual_reduces_to_prune(self):
        t = make_tokens(np.eye(4))
        s = scores_of([0.4, 0.3, 0.2, 0.1])
        assert dominant_contextual(t, s, 2, 0) == prune_topk(s, Budget(count=2))

    def test_all_contextual_is_identity(self, rng):
        t = make_tokens(rng.normal(size=(4, 2)))
        plan = dominant_contextual(t, scores_of([1, 2, 3, 4]), 0, 4)
        assert plan.kept == (0, 1, 2, 3)
        assert plan.merges == ()

    def test_duplicates_merge_into_seed(self):
        # two high-score orthogonal tokens, two low-score duplicates
        t = make_tokens([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 1]])
        s = scores_of([0.9, 0.8, 0.1, 0.1])
        plan = dominant_contextual(t, s, 2, 1)
        assert plan.kept == (0, 1, 2)
        assert plan.merges == ((2, (3,)),)
        assert plan.mode is ReductionMode.PRUNE_THEN_MERGE

    def test_budget_overflow(self):
        t = make_tokens(np.eye(3))
        with pytest.raises(BudgetExceedsTokens):
            dominant_contextual(t, scores_of([1, 2, 3]), 2, 2)

    def test_full_budget_mixed_split_is_identity(self, rng):
        t = make_tokens(rng.normal(size=(6, 3)))
        plan = dominant_contextual(t, scores_of(rng.normal(size=6)), 2, 4)
        assert plan.kept == tuple(range(6))
        assert plan.merges == ()


class TestPruneThenMerge:
    def test_passthrough(self):
        t = make_tokens(np.eye(3))
        plan = prune_topk(scores_of([3, 2, 1]), Budget(count=2))
        assert prune_then_merge(t, plan, merge_dropped=False) == plan

    def test_dropped_duplicate_reattaches(self):
        t = make_tokens([[1, 0], [0, 1], [1, 0]])
        plan = prune_topk(scores_of([0.9, 0.8, 0.1]), Budget(count=2))
        merged = prune_then_merge(t, plan, merge_dropped=True)
        assert merged.kept == (0, 1)
        assert merged.merges == ((0, (2,)),)

    def test_orthogonal_dropped_attach_to_lowest_kept(self):
        t = make_tokens(np.eye(4))
        plan = prune_topk(scores_of([0.9, 0.8, 0.1, 0.1]), Budget(count=2))
        merged = prune_then_merge(t, plan, merge_dropped=True)
        assert merged.merges == ((0, (2, 3)),)

    def test_requires_prune_mode(self):
        t = make_tokens(np.eye(2))
        with pytest.raises(InvalidParameter):
            prune_then_merge(t, identity_plan(2, ReductionMode.MERGE), True)


class TestVisPruner:
    def test_hybrid_selection(self):
        t = make_tokens([[1, 0], [1, 0], [0, 1], [0.9, 0.1]])
        bundle = AttentionBundle(cls_to_patch=np.array([0.55, 0.15, 0.15, 0.15]))
        plan = vispruner_select(t, cls_scores(bundle), k_attention=1, k_diverse=2)
        assert 0 in plan.kept
        assert plan.n_kept == 3
        assert plan.mode is ReductionMode.PRUNE


def test_all_operators_emit_valid_plans(rng):
    # plan invariants are enforced at construction, so surviving a run is
    # itself the structural check
    for _ in range(30):
        n = int(rng.integers(4, 13))
        t = make_tokens(rng.normal(size=(n, 4)))
        s = scores_of(rng.normal(size=n))
        k = int(rng.integers(1, n + 1))
        prune_topk(s, Budget(count=k))
        divprune_select(t, Budget(count=max(2, k)))
        tome_merge(t, int(rng.integers(0, n // 2 + 1)), 1)
        k_dom = int(rng.integers(0, n))
        k_ctx = int(rng.integers(0 if k_dom else 1, n - k_dom + 1))
        if k_dom + k_ctx:
            dominant_contextual(t, s, k_dom, k_ctx)
        plan = prune_topk(s, Budget(count=k))
        prune_then_merge(t, plan, True)
