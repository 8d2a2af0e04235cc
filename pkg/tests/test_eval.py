import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference_scores as ref
from tokpress.errors import DuplicateQuestions, EmptyInput, InvalidParameter
from tokpress.evalharness import (
    BenchScore,
    CostModel,
    MultiTurnRecord,
    aggregate,
    build_pairs,
    conditional_accuracy,
    cost_estimate,
    emit_report,
    load_bench_scores,
    load_multiturn_records,
    render_report,
)
from tokpress.quant import QuantSpec


def bench_rows(scores, uppers=None):
    if uppers is None:
        uppers = ref.UPPER_BOUND
    return [
        BenchScore(name, s, u)
        for name, s, u in zip(ref.BENCHMARKS, scores, uppers)
    ]


class TestAggregate:
    def test_upper_bound_row(self):
        result = aggregate(bench_rows(ref.UPPER_BOUND))
        assert result.acc == pytest.approx(ref.UPPER_BOUND_ACC, abs=1e-9)
        assert result.rel_percent == pytest.approx(100.0)

    def test_attention_prune_at_192(self):
        scores = (59.3, 63.5, 63.8, 86.4, 44.8, 54.3, 68.6)
        result = aggregate(bench_rows(scores))
        assert result.acc == pytest.approx(62.9, abs=0.1)
        assert result.rel_percent == pytest.approx(97.9, abs=0.1)

    def test_method_equal_to_upper_bound(self, rng):
        uppers = rng.uniform(10, 90, size=7)
        result = aggregate(bench_rows(uppers, uppers))
        assert result.rel_percent == pytest.approx(100.0)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    def test_upper_bound_positive(self):
        with pytest.raises(InvalidParameter):
            BenchScore("x", 1.0, 0.0)

    def test_formatted_one_decimal(self):
        result = aggregate(bench_rows(ref.UPPER_BOUND))
        assert result.formatted() == ("64.3", "100.0")

    @pytest.mark.parametrize(
        "scores,acc,rel",
        [
            pytest.param(scores, acc, rel, id=f"{table}-{method}-{budget}")
            for table, method, budget, scores, acc, rel in ref.ALL_NEXT_ROWS
        ],
    )
    def test_high_resolution_model_rows(self, scores, acc, rel):
        # second model family: every published (Acc, Rel) pair reproduces
        result = aggregate(bench_rows(scores, ref.NEXT_UPPER_BOUND))
        assert result.acc == pytest.approx(acc, abs=0.1)
        assert result.rel_percent == pytest.approx(rel, abs=0.1)

    def test_high_resolution_upper_bound(self):
        result = aggregate(bench_rows(ref.NEXT_UPPER_BOUND, ref.NEXT_UPPER_BOUND))
        assert result.acc == pytest.approx(ref.NEXT_UPPER_BOUND_ACC, abs=0.1)
        assert result.rel_percent == pytest.approx(100.0)


class TestConditionalAccuracy:
    @staticmethod
    def records(n1_only, n_both, n_neither=0, n2_only=0):
        recs = []
        recs += [MultiTurnRecord(f"a{i}", True, False) for i in range(n1_only)]
        recs += [MultiTurnRecord(f"b{i}", True, True) for i in range(n_both)]
        recs += [MultiTurnRecord(f"c{i}", False, False) for i in range(n_neither)]
        recs += [MultiTurnRecord(f"d{i}", False, True) for i in range(n2_only)]
        return recs

    def test_all_correct(self):
        assert conditional_accuracy(self.records(0, 5)) == 1.0

    def test_eight_of_ten(self):
        assert conditional_accuracy(self.records(2, 8, n_neither=3)) == pytest.approx(0.8)

    def test_undefined_not_zero(self):
        assert conditional_accuracy(self.records(0, 0, n_neither=4, n2_only=2)) is None

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40),
           st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_permutation_and_duplication_invariance(self, bits, seed):
        recs = [MultiTurnRecord(str(i), q1, q2) for i, (q1, q2) in enumerate(bits)]
        base = conditional_accuracy(recs)
        shuffled = list(recs)
        np.random.default_rng(seed).shuffle(shuffled)
        assert conditional_accuracy(shuffled) == base
        assert conditional_accuracy(recs + recs) == base


class TestBuildPairs:
    def test_each_question_once_per_slot(self):
        tasks = build_pairs([("img0", "what color?", "how many?")])
        assert len(tasks) == 2
        firsts = [t.first_question for t in tasks]
        seconds = [t.second_question for t in tasks]
        assert sorted(firsts) == sorted(seconds) == ["how many?", "what color?"]
        assert {t.order for t in tasks} == {"original", "swapped"}

    def test_empty_input(self):
        assert build_pairs([]) == []

    def test_duplicate_questions_rejected(self):
        with pytest.raises(DuplicateQuestions):
            build_pairs([("img0", "same?", "same?")])
        with pytest.raises(DuplicateQuestions):
            build_pairs([("img0", "", "b")])


class TestCostEstimate:
    MODEL = CostModel(hidden_dim=64, n_layers=4, n_params=1e6, kv_bytes_per_token=512)

    def test_halving_tokens(self):
        full = cost_estimate(self.MODEL, 200)
        half = cost_estimate(self.MODEL, 100)
        d, m = self.MODEL.hidden_dim, self.MODEL
        attn_full = m.n_layers * m.c_attn * 200 * 200 * d
        attn_half = m.n_layers * m.c_attn * 100 * 100 * d
        mlp_full = m.n_layers * m.c_mlp * 200 * d * d
        mlp_half = m.n_layers * m.c_mlp * 100 * d * d
        assert full.prefill_flops == attn_full + mlp_full
        assert half.prefill_flops == attn_half + mlp_half
        assert attn_half == attn_full / 4
        assert mlp_half == mlp_full / 2

    def test_8bit_weights_halve_bytes(self):
        base = cost_estimate(self.MODEL, 100)
        quantized = cost_estimate(self.MODEL, 100, QuantSpec(bits=8))
        assert quantized.weight_bytes == base.weight_bytes / 2

    def test_kv_bytes_unchanged_by_quant(self):
        base = cost_estimate(self.MODEL, 100)
        quantized = cost_estimate(self.MODEL, 100, QuantSpec(bits=4))
        assert quantized.kv_bytes == base.kv_bytes

    def test_monotone_in_tokens_and_bits(self):
        f = [cost_estimate(self.MODEL, n).prefill_flops for n in (10, 20, 40)]
        assert f[0] < f[1] < f[2]
        w4 = cost_estimate(self.MODEL, 10, QuantSpec(bits=4)).weight_bytes
        w8 = cost_estimate(self.MODEL, 10, QuantSpec(bits=8)).weight_bytes
        assert w4 < w8


class TestReports:
    def test_empty_gives_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_report([], path, fields=["a", "b"])
        assert path.read_bytes() == b"a,b\n"

    def test_byte_identical_for_same_input(self):
        rows = [{"name": "x", "value": 1.23456789}, {"name": "y", "value": 2.0}]
        assert render_report(rows) == render_report(rows)
        assert render_report(rows, "json") == render_report(rows, "json")

    def test_round_trip_preserves_printed_precision(self, tmp_path):
        rows = [{"method": "m", "acc": 62.957142857}]
        path = tmp_path / "r.csv"
        emit_report(rows, path)
        import csv

        with open(path) as fh:
            row = next(csv.DictReader(fh))
        assert float(row["acc"]) == pytest.approx(62.957142857, abs=1e-6)

    def test_csv_loader(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "benchmark,method,score,upper_bound\n"
            "gqa,m1,59.3,62.0\n"
            "mmb,m1,63.5,64.2\n"
            "gqa,m2,50.0,62.0\n"
        )
        by_method = load_bench_scores(path)
        assert list(by_method) == ["m1", "m2"]
        assert len(by_method["m1"]) == 2

    def test_multiturn_loader(self, tmp_path):
        path = tmp_path / "records.csv"
        path.write_text(
            "image_id,order,q1_correct,q2_correct\n"
            "i0,original,1,1\n"
            "i0,swapped,true,false\n"
        )
        records = load_multiturn_records(path)
        assert records[0].q1_correct and records[0].q2_correct
        assert records[1].q1_correct and not records[1].q2_correct
