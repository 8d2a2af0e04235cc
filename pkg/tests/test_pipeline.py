import json

import numpy as np
import pytest
from click.testing import CliRunner

from tokpress.cli import main as cli_main
from tokpress.dumpio import write_dump, write_matrix
from tokpress.errors import InvalidParameter, UnknownOperator
from tokpress.model import AttentionBundle
from tokpress.pipeline import load_config, parse_config, run

from conftest import make_tokens


@pytest.fixture
def workdir(tmp_path, rng):
    """A tmp dir holding one image dump, one video dump, and weight files."""
    image = make_tokens(rng.normal(size=(16, 6)).astype(np.float32), frames=1, grid=(4, 4))
    bundle = AttentionBundle(
        cls_to_patch=rng.dirichlet(np.ones(16)),
        text_to_visual=rng.dirichlet(np.ones(16), size=3),
    )
    write_dump(tmp_path / "image.tokd", image, bundle)

    frame = rng.normal(size=(4, 6)).astype(np.float32)
    video = make_tokens(np.concatenate([frame] * 4), frames=4, grid=(2, 2))
    write_dump(tmp_path / "video.tokd", video)

    write_matrix(tmp_path / "weights.bin", rng.normal(size=(8, 8)).astype(np.float32))
    write_matrix(tmp_path / "calib.bin", rng.normal(size=(32, 8)).astype(np.float32))
    return tmp_path


MINIMAL = """
inputs: [image.tokd]
stages:
  - {stage: metrics, op: cls_scores}
  - {stage: spatial, op: prune_topk, params: {k: 4}}
"""


class TestParseConfig:
    def test_minimal_valid(self, workdir):
        config = parse_config(MINIMAL, base_dir=workdir)
        assert len(config.stages) == 2
        assert config.stages[1].params["k"] == 4

    def test_unknown_operator_names_nearest(self, workdir):
        text = MINIMAL.replace("prune_topk", "prune_topkk")
        with pytest.raises(UnknownOperator, match="prune_topk"):
            parse_config(text, base_dir=workdir)

    def test_alias_accepted_and_typo_suggested(self, workdir):
        ok = parse_config(MINIMAL.replace("prune_topk", "fastv"), base_dir=workdir)
        assert ok.stages[1].op == "prune_topk"
        with pytest.raises(UnknownOperator, match="fastv"):
            parse_config(MINIMAL.replace("prune_topk", "fastvv"), base_dir=workdir)

    def test_invalid_merge_rate(self, workdir):
        text = """
inputs: [video.tokd]
stages:
  - stage: temporal
    op: temporal_merge
    params: {segmentation: fixed, segment_length: 2, merge_rate: 1.5}
"""
        with pytest.raises(InvalidParameter, match="merge_rate"):
            parse_config(text, base_dir=workdir)

    def test_error_carries_line_number(self, workdir):
        text = """inputs: [video.tokd]
stages:
  - stage: temporal
    op: temporal_merge
    params:
      segmentation: fixed
      segment_length: 2
      merge_rate: 1.5
"""
        with pytest.raises(InvalidParameter) as err:
            parse_config(text, base_dir=workdir)
        assert err.value.line == 8

    def test_stage_order_enforced(self, workdir):
        text = """
inputs: [image.tokd]
stages:
  - {stage: spatial, op: divprune, params: {k: 4}}
  - {stage: metrics, op: cls_scores}
"""
        with pytest.raises(InvalidParameter, match="later-phase"):
            parse_config(text, base_dir=workdir)

    def test_temporal_allowed_before_spatial(self, workdir):
        text = """
inputs: [video.tokd]
stages:
  - stage: temporal
    op: temporal_merge
    params: {segmentation: fixed, segment_length: 2, merge_rate: 0.5}
  - {stage: spatial, op: window_merge, params: {sim_threshold: 0.95}}
"""
        config = parse_config(text, base_dir=workdir)
        assert [s.kind for s in config.stages] == ["temporal", "spatial"]

    def test_syntax_error_reported(self):
        from tokpress.errors import ConfigSyntaxError

        with pytest.raises(ConfigSyntaxError):
            parse_config("stages:\n  - {unclosed", base_dir=".")

    def test_unknown_top_level_key(self):
        with pytest.raises(InvalidParameter, match="inputz"):
            parse_config("inputz: []", base_dir=".")

    def test_missing_segmentation_param(self, workdir):
        text = """
inputs: [video.tokd]
stages:
  - stage: temporal
    op: temporal_merge
    params: {segmentation: dp, merge_rate: 0.5}
"""
        with pytest.raises(InvalidParameter, match="max_segments"):
            parse_config(text, base_dir=workdir)

    def test_budget_placeholder_requires_budgets(self, workdir):
        text = """
inputs: [image.tokd]
stages:
  - {stage: metrics, op: cls_scores}
  - {stage: spatial, op: prune_topk, params: {k: $budget}}
"""
        with pytest.raises(InvalidParameter, match="budget"):
            parse_config(text, base_dir=workdir)


class TestRun:
    def test_identity_pipeline(self, workdir):
        config = parse_config("inputs: [image.tokd]\nstages: []", base_dir=workdir)
        result = run(config)
        assert len(result.run_rows) == 1
        assert result.run_rows[0]["retention_rate"] == 1.0

    def test_budget_sweep_monotone(self, workdir):
        text = """
inputs: [image.tokd]
budgets: [12, 8, 4]
stages:
  - {stage: metrics, op: cls_scores}
  - {stage: spatial, op: prune_topk}
"""
        result = run(parse_config(text, base_dir=workdir))
        rates = [row["retention_rate"] for row in result.run_rows]
        assert rates == sorted(rates, reverse=True)
        assert [row["budget"] for row in result.run_rows] == [12, 8, 4]

    def test_temporal_then_spatial_composition(self, workdir):
        text = """
inputs: [video.tokd]
stages:
  - stage: temporal
    op: temporal_merge
    params: {segmentation: threshold, tau: 0.5, merge_rate: 0.5}
  - {stage: spatial, op: window_merge, params: {window_h: 2, window_w: 2, sim_threshold: 0.99}}
"""
        result = run(parse_config(text, base_dir=workdir))
        row = result.run_rows[0]
        assert row["final_tokens"] < row["original_tokens"]
        assert row["sim_evals"] > 0

    def test_quant_and_cost_stages(self, workdir):
        text = """
inputs: [image.tokd]
stages:
  - {stage: metrics, op: cls_scores}
  - {stage: spatial, op: prune_topk, params: {k: 8}}
  - {stage: quant, op: gptq, params: {weights: weights.bin, calib: calib.bin, bits: 4, granularity: per-channel}}
  - {stage: eval, op: cost, params: {hidden_dim: 64, n_layers: 2, n_params: 1000000, kv_bytes_per_token: 512}}
"""
        result = run(parse_config(text, base_dir=workdir))
        assert result.quant_rows[0]["op"] == "gptq"
        assert result.quant_rows[0]["output_mse"] >= 0
        row = result.run_rows[0]
        assert row["weight_bytes"] == 1e6 * 2.0 * (4 / 16)
        assert row["kv_bytes"] == 8 * 512

    def test_determinism_and_manifest_replay(self, workdir, tmp_path):
        text = """
inputs: [image.tokd]
seed: 7
budgets: [8, 4]
stages:
  - {stage: metrics, op: text_scores, params: {reduce: mean}}
  - {stage: spatial, op: prune_topk}
  - {stage: quant, op: rtn, params: {weights: weights.bin, bits: 8}}
"""
        config = parse_config(text, base_dir=workdir)
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        run(config, out_dir=out1)
        run(config, out_dir=out2)
        for name in ("runs.csv", "quant.csv", "manifest.json", "summary.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

        replayed = load_config(out1 / "manifest.json")
        out3 = tmp_path / "run3"
        run(replayed, out_dir=out3)
        for name in ("runs.csv", "quant.csv", "summary.json"):
            assert (out1 / name).read_bytes() == (out3 / name).read_bytes(), name

    def test_workers_match_serial(self, workdir, tmp_path):
        text = """
inputs: [image.tokd, video.tokd]
stages:
  - {stage: spatial, op: divprune, params: {k: 4}}
"""
        config = parse_config(text, base_dir=workdir)
        serial = run(config, out_dir=tmp_path / "serial")
        parallel = run(config, out_dir=tmp_path / "parallel", workers=2)
        assert serial.run_rows == parallel.run_rows
        assert (tmp_path / "serial/runs.csv").read_bytes() == (
            tmp_path / "parallel/runs.csv"
        ).read_bytes()

    def test_missing_scores_is_data_error(self, workdir):
        from tokpress.errors import DataError

        text = """
inputs: [image.tokd]
stages:
  - {stage: spatial, op: prune_topk, params: {k: 4}}
"""
        with pytest.raises(DataError, match="metrics"):
            run(parse_config(text, base_dir=workdir))

    def test_errors_carry_stage_index(self, workdir):
        from tokpress.errors import DataError

        text = """
inputs: [image.tokd]
stages:
  - {stage: metrics, op: cls_scores}
  - {stage: spatial, op: tome, params: {r: 2, steps: 1}}
  - stage: temporal
    op: temporal_merge
    params: {segmentation: fixed, segment_length: 1, merge_rate: 0.5}
"""
        # the single-frame image cannot be temporally reduced: stage 2 fails
        with pytest.raises(DataError, match=r"stage\[2\] temporal_merge"):
            run(parse_config(text, base_dir=workdir))

    def test_sim_eval_counter_closed_form(self, workdir):
        # redundancy scoring computes the full pairwise matrix: n^2 entries
        text = """
inputs: [image.tokd]
stages:
  - {stage: metrics, op: redundancy_scores}
  - {stage: spatial, op: prune_topk, params: {k: 4}}
"""
        result = run(parse_config(text, base_dir=workdir))
        assert result.run_rows[0]["sim_evals"] == 16 * 16

    def test_conditional_eval_stage(self, workdir):
        records = workdir / "records.csv"
        records.write_text(
            "image_id,order,q1_correct,q2_correct\n"
            "i0,original,1,1\n"
            "i0,swapped,1,0\n"
            "i1,original,0,0\n"
        )
        text = """
inputs: []
stages:
  - {stage: eval, op: conditional, params: {records_csv: records.csv}}
"""
        result = run(parse_config(text, base_dir=workdir))
        assert result.conditional_rows[0]["conditional_accuracy"] == 0.5


class TestCli:
    def test_run_and_exit_codes(self, workdir, tmp_path):
        runner = CliRunner()
        config_path = workdir / "pipe.yaml"
        config_path.write_text(MINIMAL)
        result = runner.invoke(
            cli_main, ["run", str(config_path), "--out", str(tmp_path / "out")]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "runs.csv").exists()

    def test_config_error_exit_2(self, workdir):
        bad = workdir / "bad.yaml"
        bad.write_text(MINIMAL.replace("prune_topk", "nonsense_op"))
        result = CliRunner().invoke(cli_main, ["run", str(bad)])
        assert result.exit_code == 2

    def test_data_error_exit_3(self, workdir):
        cfg = workdir / "missing.yaml"
        cfg.write_text("inputs: [absent.tokd]\nstages: [{stage: spatial, op: divprune, params: {k: 2}}]")
        result = CliRunner().invoke(cli_main, ["run", str(cfg)])
        assert result.exit_code == 3

    def test_inspect(self, workdir):
        result = CliRunner().invoke(cli_main, ["inspect", str(workdir / "image.tokd")])
        assert result.exit_code == 0
        assert "16 tokens" in result.output
        assert "checksum: ok" in result.output

    def test_inspect_corrupt_exit_3(self, workdir):
        path = workdir / "corrupt.tokd"
        raw = bytearray((workdir / "image.tokd").read_bytes())
        raw[35] ^= 0x55
        path.write_bytes(bytes(raw))
        result = CliRunner().invoke(cli_main, ["inspect", str(path)])
        assert result.exit_code == 3

    def test_oracle_suite(self):
        result = CliRunner().invoke(cli_main, ["oracle", "compose"])
        assert result.exit_code == 0
        assert "[PASS] compose" in result.output

    def test_report_command(self, tmp_path):
        csv_path = tmp_path / "scores.csv"
        csv_path.write_text(
            "benchmark,method,score,upper_bound\n"
            "gqa,upper,62.0,62.0\n"
            "mmb,upper,64.2,64.2\n"
        )
        result = CliRunner().invoke(cli_main, ["report", str(csv_path)])
        assert result.exit_code == 0
        assert "100.0" in result.output
