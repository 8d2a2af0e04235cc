"""Config-driven composition: metrics -> reduction -> quantization -> eval.

A pipeline is described in YAML (JSON works too, being a YAML subset).
Top-level keys::

    inputs:  [dump paths]          # token dumps to process
    seed:    0                     # recorded; all operators are deterministic
    budgets: [192, 128, 64]        # optional sweep, substituted for "$budget"
    stages:  [{stage, op, params}]

Stage kinds run in the order metrics -> {spatial, temporal} -> quant ->
eval; spatial and temporal stages may interleave. Every run emits
deterministic artifacts (``runs.csv``, ``quant.csv``, ``eval_*.csv``,
``summary.json`` and a replayable ``manifest.json``) plus a
``timings.log`` that is deliberately outside the determinism guarantee.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import counters, metrics, spatial, temporal
from .dumpio import load_weight_matrix, read_dump, read_matrix
from .errors import (
    ConfigSyntaxError,
    DataError,
    InvalidParameter,
    UnknownOperator,
)
from .evalharness import (
    CostModel,
    aggregate,
    conditional_accuracy,
    cost_estimate,
    load_bench_scores,
    load_multiturn_records,
    render_report,
)
from .model import TokenSet, apply_plan
from .quant import (
    QuantSpec,
    QuantScope,
    gptq_quantize,
    quant_eval,
    quantize_rtn,
    w8a8_matmul,
)

BUDGET_PLACEHOLDER = "$budget"

_STAGE_RANK = {"metrics": 0, "spatial": 1, "temporal": 1, "quant": 2, "eval": 3}


# --------------------------------------------------------------------------
# parameter schema


@dataclass(frozen=True)
class _Param:
    kind: str  # int | number | str | bool | path
    required: bool = False
    default: Any = None
    choices: Optional[tuple] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    min_exclusive: bool = False
    max_exclusive: bool = False
    allow_budget: bool = False


_SEGMENTATION_PARAMS = {
    "segmentation": _Param("str", required=True, choices=("fixed", "threshold", "dp")),
    "segment_length": _Param("int", minimum=1),
    "tau": _Param("number", minimum=-1, maximum=1, min_exclusive=True, max_exclusive=True),
    "max_segments": _Param("int", minimum=1),
    "merge_rate": _Param(
        "number", required=True, minimum=0, maximum=1, max_exclusive=True
    ),
}

_QUANT_COMMON = {
    "weights": _Param("path", required=True),
    "bits": _Param("int", default=8, choices=(4, 8)),
    "granularity": _Param(
        "str", default="per-tensor", choices=("per-tensor", "per-channel", "group")
    ),
    "group_size": _Param("int", minimum=1),
    "symmetric": _Param("bool", default=True),
}

OPERATORS: dict[str, dict[str, dict[str, _Param]]] = {
    "metrics": {
        "cls_scores": {},
        "text_scores": {
            "reduce": _Param("str", default="mean", choices=("mean", "last_row")),
        },
        "redundancy_scores": {},
    },
    "spatial": {
        "prune_topk": {
            "k": _Param("int", minimum=1, allow_budget=True),
            "ratio": _Param("number", minimum=0, maximum=1, min_exclusive=True),
            "merge_dropped": _Param("bool", default=False),
        },
        "divprune": {
            "k": _Param("int", minimum=1, allow_budget=True),
            "ratio": _Param("number", minimum=0, maximum=1, min_exclusive=True),
            "metric": _Param("str", default="cosine", choices=("cosine", "euclidean")),
            "merge_dropped": _Param("bool", default=False),
        },
        "tome": {
            "r": _Param("int", required=True, minimum=0),
            "steps": _Param("int", default=1, minimum=0),
        },
        "window_merge": {
            "window_h": _Param("int", default=3, minimum=1),
            "window_w": _Param("int", default=3, minimum=1),
            "sim_threshold": _Param("number", required=True),
        },
        "dominant_contextual": {
            "k_dominant": _Param("int", required=True, minimum=0, allow_budget=True),
            "k_contextual": _Param("int", required=True, minimum=0),
        },
        "vispruner": {
            "k_attention": _Param("int", required=True, minimum=0, allow_budget=True),
            "k_diverse": _Param("int", required=True, minimum=0),
        },
    },
    "temporal": {
        "temporal_merge": dict(_SEGMENTATION_PARAMS),
        "temporal_prune": dict(_SEGMENTATION_PARAMS),
    },
    "quant": {
        "rtn": {**_QUANT_COMMON, "calib": _Param("path")},
        "gptq": {**_QUANT_COMMON, "calib": _Param("path", required=True)},
        "smooth_w8a8": {
            "weights": _Param("path", required=True),
            "calib": _Param("path", required=True),
            "alpha": _Param("number", default=0.5, minimum=0, maximum=1),
        },
    },
    "eval": {
        "aggregate": {"scores_csv": _Param("path", required=True)},
        "conditional": {"records_csv": _Param("path", required=True)},
        "cost": {
            "hidden_dim": _Param("int", required=True, minimum=1),
            "n_layers": _Param("int", required=True, minimum=1),
            "n_params": _Param("number", required=True, minimum=0),
            "kv_bytes_per_token": _Param("number", required=True, minimum=0),
            "c_attn": _Param("number", default=2.0, minimum=0),
            "c_mlp": _Param("number", default=8.0, minimum=0),
        },
    },
}


# familiar method names accepted where the mapping is one operator
ALIASES: dict[str, dict[str, str]] = {
    "spatial": {"fastv": "prune_topk"},
    "temporal": {"dycoke": "temporal_prune", "prunevid": "temporal_merge"},
    "quant": {"smoothquant": "smooth_w8a8"},
}


@dataclass(frozen=True)
class StageSpec:
    kind: str
    op: str
    params: dict[str, Any]
    line: Optional[int] = None


@dataclass(frozen=True)
class PipelineConfig:
    inputs: tuple[str, ...]
    stages: tuple[StageSpec, ...]
    budgets: Optional[tuple[int, ...]]
    seed: int

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "seed": self.seed,
            "budgets": None if self.budgets is None else list(self.budgets),
            "stages": [
                {"stage": s.kind, "op": s.op, "params": dict(s.params)}
                for s in self.stages
            ],
        }


# --------------------------------------------------------------------------
# parsing


def _line_table(node, path=(), table=None):
    """Map config paths to 1-based line numbers from the YAML node graph."""
    if table is None:
        table = {}
    table[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            _line_table(value_node, path + (key_node.value,), table)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_table(item, path + (i,), table)
    return table


def _nearest(name: str, options) -> str:
    hits = difflib.get_close_matches(name, list(options), n=1)
    return f"; did you mean {hits[0]!r}?" if hits else ""


def _coerce_param(stage_i: int, op: str, name: str, spec: _Param, value, line):
    where = f"stages[{stage_i}] {op}.{name}"
    if isinstance(value, str) and value == BUDGET_PLACEHOLDER:
        if not spec.allow_budget:
            raise InvalidParameter(f"{where} does not accept {BUDGET_PLACEHOLDER}", line)
        return value
    if spec.kind == "bool":
        if not isinstance(value, bool):
            raise InvalidParameter(f"{where} must be a boolean", line)
        return value
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidParameter(f"{where} must be an integer", line)
    elif spec.kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidParameter(f"{where} must be a number", line)
        value = float(value)
    elif spec.kind in ("str", "path"):
        if not isinstance(value, str) or not value:
            raise InvalidParameter(f"{where} must be a nonempty string", line)
    if spec.choices is not None and value not in spec.choices:
        raise InvalidParameter(
            f"{where} must be one of {list(spec.choices)}, got {value!r}", line
        )
    if spec.minimum is not None and isinstance(value, (int, float)):
        if spec.min_exclusive and value <= spec.minimum:
            raise InvalidParameter(f"{where} must be > {spec.minimum}", line)
        if not spec.min_exclusive and value < spec.minimum:
            raise InvalidParameter(f"{where} must be >= {spec.minimum}", line)
    if spec.maximum is not None and isinstance(value, (int, float)):
        if spec.max_exclusive and value >= spec.maximum:
            raise InvalidParameter(f"{where} must be < {spec.maximum}", line)
        if not spec.max_exclusive and value > spec.maximum:
            raise InvalidParameter(f"{where} must be <= {spec.maximum}", line)
    return value


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    """Parse and fully validate a pipeline config.

    The first problem found is raised with its line number. Relative
    paths resolve against ``base_dir``. A mapping with a single
    ``config`` key (the shape of an emitted manifest) is unwrapped, so
    manifests replay directly.
    """
    base = Path(base_dir)
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigSyntaxError(f"config does not parse: {exc}", line) from exc
    if node is None or not isinstance(data, dict):
        raise ConfigSyntaxError("config must be a mapping")
    lines = _line_table(node)
    prefix: tuple = ()
    if "config" in data:  # manifest replay
        data = data["config"]
        prefix = ("config",)
        if not isinstance(data, dict):
            raise ConfigSyntaxError("manifest 'config' must be a mapping")

    def line_of(*path) -> Optional[int]:
        return lines.get(prefix + tuple(path))

    known_top = {"inputs", "seed", "budgets", "stages"}
    for key in data:
        if key not in known_top:
            raise InvalidParameter(
                f"unknown top-level key {key!r}{_nearest(key, known_top)}",
                line_of(key),
            )

    raw_inputs = data.get("inputs", [])
    if not isinstance(raw_inputs, list) or not all(isinstance(p, str) for p in raw_inputs):
        raise InvalidParameter("inputs must be a list of paths", line_of("inputs"))
    inputs = tuple(str((base / p).resolve()) for p in raw_inputs)

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise InvalidParameter("seed must be a nonnegative integer", line_of("seed"))

    budgets = data.get("budgets")
    if budgets is not None:
        if (
            not isinstance(budgets, list)
            or not budgets
            or not all(isinstance(b, int) and not isinstance(b, bool) and b >= 1 for b in budgets)
        ):
            raise InvalidParameter(
                "budgets must be a nonempty list of integers >= 1", line_of("budgets")
            )
        budgets = tuple(budgets)

    raw_stages = data.get("stages", [])
    if not isinstance(raw_stages, list):
        raise InvalidParameter("stages must be a list", line_of("stages"))
    stages: list[StageSpec] = []
    last_rank = -1
    uses_budget = False
    for i, raw in enumerate(raw_stages):
        line = line_of("stages", i)
        if not isinstance(raw, dict):
            raise InvalidParameter(f"stages[{i}] must be a mapping", line)
        unknown = set(raw) - {"stage", "op", "params"}
        if unknown:
            key = sorted(unknown)[0]
            raise InvalidParameter(
                f"stages[{i}]: unknown key {key!r}", line_of("stages", i, key)
            )
        kind = raw.get("stage")
        if kind not in _STAGE_RANK:
            raise UnknownOperator(
                f"stages[{i}]: unknown stage kind {kind!r}"
                f"{_nearest(str(kind), _STAGE_RANK)}",
                line_of("stages", i, "stage") or line,
            )
        rank = _STAGE_RANK[kind]
        if rank < last_rank:
            raise InvalidParameter(
                f"stages[{i}]: {kind} stage cannot follow a later-phase stage", line
            )
        last_rank = max(last_rank, rank)
        op = raw.get("op")
        table = OPERATORS[kind]
        aliases = ALIASES.get(kind, {})
        if isinstance(op, str) and op in aliases:
            op = aliases[op]
        if not isinstance(op, str) or op not in table:
            known = set(table) | set(aliases)
            raise UnknownOperator(
                f"stages[{i}]: unknown {kind} operator {op!r}{_nearest(str(op), known)}",
                line_of("stages", i, "op") or line,
            )
        raw_params = raw.get("params") or {}
        if not isinstance(raw_params, dict):
            raise InvalidParameter(
                f"stages[{i}]: params must be a mapping", line_of("stages", i, "params")
            )
        schema = table[op]
        params: dict[str, Any] = {}
        for name, value in raw_params.items():
            if name not in schema:
                raise InvalidParameter(
                    f"stages[{i}] {op}: unknown parameter {name!r}"
                    f"{_nearest(name, schema)}",
                    line_of("stages", i, "params", name),
                )
            params[name] = _coerce_param(
                i, op, name, schema[name], value, line_of("stages", i, "params", name)
            )
            if params[name] == BUDGET_PLACEHOLDER:
                uses_budget = True
        for name, spec in schema.items():
            if name not in params:
                if spec.required:
                    raise InvalidParameter(
                        f"stages[{i}] {op}: missing required parameter {name!r}", line
                    )
                if spec.default is not None:
                    params[name] = spec.default
        if kind == "temporal":
            needed = {"fixed": "segment_length", "threshold": "tau", "dp": "max_segments"}[
                params["segmentation"]
            ]
            if needed not in params:
                raise InvalidParameter(
                    f"stages[{i}] {op}: {params['segmentation']} segmentation "
                    f"needs {needed!r}",
                    line,
                )
        if "k" in params and "ratio" in params:
            raise InvalidParameter(
                f"stages[{i}] {op}: give k or ratio, not both", line
            )
        if spec_needs_budget(kind, op, params) and budgets is None:
            raise InvalidParameter(
                f"stages[{i}] {op}: needs k, ratio, or a top-level budgets list", line
            )
        if kind == "quant" or op in ("aggregate", "conditional"):
            for key in ("weights", "calib", "scores_csv", "records_csv"):
                if key in params and isinstance(params[key], str):
                    params[key] = str((base / params[key]).resolve())
        stages.append(StageSpec(kind, op, params, line))

    if uses_budget and budgets is None:
        raise InvalidParameter(
            f"a stage references {BUDGET_PLACEHOLDER} but no budgets are listed",
            line_of("stages"),
        )
    if budgets is not None and not uses_budget and not any(
        spec_needs_budget(s.kind, s.op, s.params) for s in stages
    ):
        raise InvalidParameter(
            f"budgets listed but no stage references {BUDGET_PLACEHOLDER}",
            line_of("budgets"),
        )
    token_stages = any(s.kind in ("metrics", "spatial", "temporal") for s in stages)
    if token_stages and not inputs:
        raise InvalidParameter("token stages need at least one input dump", line_of("inputs"))
    return PipelineConfig(inputs=inputs, stages=tuple(stages), budgets=budgets, seed=seed)


def spec_needs_budget(kind: str, op: str, params: dict) -> bool:
    """Budgeted op with neither k nor ratio: it sweeps the budgets list."""
    if kind != "spatial" or op not in ("prune_topk", "divprune"):
        return False
    return "k" not in params and "ratio" not in params


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigSyntaxError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=p.parent)


# --------------------------------------------------------------------------
# execution


@dataclass
class RunResult:
    run_rows: list[dict]
    quant_rows: list[dict]
    aggregate_rows: list[dict]
    conditional_rows: list[dict]
    counter_totals: dict[str, int]
    out_dir: Optional[Path] = None
    wall_clock: float = 0.0


def _substitute_budget(params: dict, budget: Optional[int]) -> dict:
    out = {}
    for name, value in params.items():
        if isinstance(value, str) and value == BUDGET_PLACEHOLDER:
            if budget is None:
                raise InvalidParameter(f"{name}={BUDGET_PLACEHOLDER} needs a budgets list")
            out[name] = budget
        else:
            out[name] = value
    return out


def _build_partition(tokens: TokenSet, params: dict):
    seg = params["segmentation"]
    if seg == "fixed":
        if "segment_length" not in params:
            raise InvalidParameter("fixed segmentation needs segment_length")
        return temporal.segment_fixed(tokens.frames, params["segment_length"])
    series = temporal.frame_similarity(tokens)
    if seg == "threshold":
        if "tau" not in params:
            raise InvalidParameter("threshold segmentation needs tau")
        return temporal.segment_threshold(series, params["tau"])
    if "max_segments" not in params:
        raise InvalidParameter("dp segmentation needs max_segments")
    return temporal.segment_dp(series, params["max_segments"])


def _spatial_budget(op: str, params: dict, budget: Optional[int]) -> spatial.Budget:
    if "k" in params:
        return spatial.Budget(count=params["k"])
    if "ratio" in params:
        return spatial.Budget(ratio=params["ratio"])
    if budget is None:
        raise InvalidParameter(f"{op} needs k, ratio, or a budgets sweep")
    return spatial.Budget(count=budget)


def process_sample(
    path: str, stages: tuple[StageSpec, ...], budget: Optional[int]
) -> dict:
    """Run the token-level stages over one dump at one budget.

    Failures carry the failing stage's index and operator name.
    """
    tokens, bundle = read_dump(path)
    original_n = tokens.n_tokens
    scores = None
    merge_rate = None
    n_segments = None
    with counters.collect() as counted:
        for index, stage in enumerate(stages):
            try:
                params = _substitute_budget(stage.params, budget)
                if stage.kind == "metrics":
                    if stage.op == "cls_scores":
                        if bundle is None:
                            raise DataError("dump carries no attention")
                        scores = metrics.cls_scores(bundle)
                    elif stage.op == "text_scores":
                        if bundle is None:
                            raise DataError("dump carries no attention")
                        scores = metrics.text_scores(bundle, params["reduce"])
                    else:
                        scores = metrics.redundancy_scores(metrics.cosine_sim(tokens))
                    if len(scores) != tokens.n_tokens:
                        raise DataError(
                            f"scores cover {len(scores)} tokens, set has {tokens.n_tokens}"
                        )
                elif stage.kind == "spatial":
                    plan = _spatial_plan(tokens, scores, stage.op, params, budget)
                    tokens = apply_plan(tokens, plan)
                    scores = None  # positional scores die with the old index space
                elif stage.kind == "temporal":
                    partition = _build_partition(tokens, params)
                    n_segments = partition.n_segments
                    merge_rate = params["merge_rate"]
                    if stage.op == "temporal_merge":
                        plan = temporal.temporal_merge(tokens, partition, merge_rate)
                    else:
                        plan = temporal.temporal_prune(tokens, partition, merge_rate)
                    tokens = apply_plan(tokens, plan)
                    scores = None
            except DataError as exc:
                raise DataError(f"{path}: stage[{index}] {stage.op}: {exc}") from exc
    report = temporal.RateReport(
        original_tokens=original_n,
        final_tokens=tokens.n_tokens,
        merge_rate=merge_rate,
    )
    return {
        "input": path,
        "budget": "" if budget is None else budget,
        "frames": tokens.frames,
        "grid_h": tokens.grid[0],
        "grid_w": tokens.grid[1],
        "original_tokens": report.original_tokens,
        "final_tokens": report.final_tokens,
        "retention_rate": report.rr_float,
        "merge_rate": "" if merge_rate is None else merge_rate,
        "n_segments": "" if n_segments is None else n_segments,
        "sim_evals": counted.get(counters.SIM_EVALS, 0),
        "dp_cells": counted.get(counters.DP_CELLS, 0),
    }


_NEEDS_SCORES = (
    "needs live scores: add a metrics stage before it, ahead of any "
    "reduction that changes the token set"
)


def _spatial_plan(tokens, scores, op, params, budget):
    if op in ("prune_topk", "divprune"):
        bud = _spatial_budget(op, params, budget)
        if op == "prune_topk":
            if scores is None:
                raise DataError(_NEEDS_SCORES)
            plan = spatial.prune_topk(scores, bud)
        else:
            plan = spatial.divprune_select(tokens, bud, params["metric"])
        if params.get("merge_dropped"):
            plan = spatial.prune_then_merge(tokens, plan, True)
        return plan
    if op == "tome":
        return spatial.tome_merge(tokens, params["r"], params["steps"])
    if op == "window_merge":
        return spatial.window_merge(
            tokens, (params["window_h"], params["window_w"]), params["sim_threshold"]
        )
    if op == "dominant_contextual":
        if scores is None:
            raise DataError(_NEEDS_SCORES)
        return spatial.dominant_contextual(
            tokens, scores, params["k_dominant"], params["k_contextual"]
        )
    if scores is None:
        raise DataError(_NEEDS_SCORES)
    return spatial.vispruner_select(
        tokens, scores, params["k_attention"], params["k_diverse"]
    )


def _run_quant_stage(stage: StageSpec) -> dict:
    params = stage.params
    weight = load_weight_matrix(params["weights"])
    row = {
        "op": stage.op,
        "weights": params["weights"],
        "bits": params.get("bits", 8),
        "granularity": params.get("granularity", "per-tensor"),
        "max_abs_error": 0.0,
        "mean_abs_error": 0.0,
        "output_mse": 0.0,
        "rel_matmul_error": "",
        "bytes_ratio": params.get("bits", 8) / 16.0,
    }
    if stage.op == "smooth_w8a8":
        calib = read_matrix(params["calib"]).astype(np.float64)
        reference = calib @ weight.astype(np.float64)
        result = w8a8_matmul(calib, weight, alpha=params["alpha"])
        denom = float(np.linalg.norm(reference))
        rel = float(np.linalg.norm(result - reference)) / denom if denom else 0.0
        row["bits"] = 8
        row["rel_matmul_error"] = rel
        row["bytes_ratio"] = 0.5
        return row
    spec = QuantSpec(
        bits=params["bits"],
        granularity=params["granularity"],
        group_size=params.get("group_size"),
        symmetric=params["symmetric"],
    )
    if stage.op == "gptq":
        calib = read_matrix(params["calib"]).astype(np.float64)
        quantized = gptq_quantize(weight, calib, spec)
    else:
        calib_path = params.get("calib")
        calib = (
            read_matrix(calib_path).astype(np.float64)
            if calib_path
            else np.eye(weight.shape[0])
        )
        quantized = quantize_rtn(weight, spec)
    report = quant_eval(weight, quantized.dequantize(), calib)
    row["max_abs_error"] = report.max_abs_error
    row["mean_abs_error"] = report.mean_abs_error
    row["output_mse"] = report.output_mse
    return row


def run(
    config: PipelineConfig,
    out_dir: str | os.PathLike | None = None,
    workers: int = 1,
) -> RunResult:
    """Execute a pipeline. Deterministic for a fixed config and seed."""
    started = time.perf_counter()
    token_stages = tuple(
        s for s in config.stages if s.kind in ("metrics", "spatial", "temporal")
    )
    budgets: tuple[Optional[int], ...] = config.budgets or (None,)
    jobs = [
        (path, token_stages, budget) for path in config.inputs for budget in budgets
    ]
    if workers > 1 and len(jobs) > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            run_rows = pool.starmap(process_sample, jobs)
    else:
        run_rows = [process_sample(*job) for job in jobs]

    counter_totals: dict[str, int] = {}
    for row in run_rows:
        for key in (counters.SIM_EVALS, counters.DP_CELLS):
            counter_totals[key] = counter_totals.get(key, 0) + row[key]

    quant_rows = [
        _run_quant_stage(s) for s in config.stages if s.kind == "quant"
    ]
    # cost estimates take their bit width from the first quant stage
    quant_spec: Optional[QuantSpec] = None
    for stage in config.stages:
        if stage.kind == "quant":
            bits = 8 if stage.op == "smooth_w8a8" else stage.params["bits"]
            scope = (
                QuantScope.WEIGHT_ACTIVATION
                if stage.op == "smooth_w8a8"
                else QuantScope.WEIGHT_ONLY
            )
            quant_spec = QuantSpec(bits=bits, scope=scope)
            break

    aggregate_rows: list[dict] = []
    conditional_rows: list[dict] = []
    for stage in config.stages:
        if stage.kind != "eval":
            continue
        if stage.op == "aggregate":
            by_method = load_bench_scores(stage.params["scores_csv"])
            for method, scores in by_method.items():
                result = aggregate(scores)
                aggregate_rows.append(
                    {
                        "method": method,
                        "n_benchmarks": len(scores),
                        "acc": result.acc,
                        "rel_percent": result.rel_percent,
                    }
                )
        elif stage.op == "conditional":
            records = load_multiturn_records(stage.params["records_csv"])
            value = conditional_accuracy(records)
            conditional_rows.append(
                {
                    "records": len(records),
                    "conditional_accuracy": "undefined" if value is None else value,
                }
            )
        else:  # cost proxy per run row
            model = CostModel(
                hidden_dim=stage.params["hidden_dim"],
                n_layers=stage.params["n_layers"],
                n_params=stage.params["n_params"],
                kv_bytes_per_token=stage.params["kv_bytes_per_token"],
                c_attn=stage.params["c_attn"],
                c_mlp=stage.params["c_mlp"],
            )
            for row in run_rows:
                estimate = cost_estimate(model, row["final_tokens"], quant_spec)
                row["prefill_flops"] = estimate.prefill_flops
                row["weight_bytes"] = estimate.weight_bytes
                row["kv_bytes"] = estimate.kv_bytes

    wall = time.perf_counter() - started
    result = RunResult(
        run_rows=run_rows,
        quant_rows=quant_rows,
        aggregate_rows=aggregate_rows,
        conditional_rows=conditional_rows,
        counter_totals=counter_totals,
        wall_clock=wall,
    )
    if out_dir is not None:
        result.out_dir = write_artifacts(config, result, Path(out_dir))
    return result


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_artifacts(config: PipelineConfig, result: RunResult, out_dir: Path) -> Path:
    """Write deterministic reports plus the replayable manifest.

    ``timings.log`` is the only non-deterministic artifact.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    if result.run_rows:
        (out_dir / "runs.csv").write_bytes(render_report(result.run_rows))
    if result.quant_rows:
        (out_dir / "quant.csv").write_bytes(render_report(result.quant_rows))
    if result.aggregate_rows:
        (out_dir / "eval_aggregate.csv").write_bytes(render_report(result.aggregate_rows))
    if result.conditional_rows:
        (out_dir / "eval_conditional.csv").write_bytes(render_report(result.conditional_rows))
    manifest = {
        "config": config.to_dict(),
        "inputs": [{"path": p, "sha256": _sha256(p)} for p in config.inputs],
        "counters": dict(sorted(result.counter_totals.items())),
    }
    (out_dir / "manifest.json").write_bytes(
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    )
    summary = {
        "samples": len(result.run_rows),
        "mean_retention_rate": (
            sum(r["retention_rate"] for r in result.run_rows) / len(result.run_rows)
            if result.run_rows
            else None
        ),
        "counters": dict(sorted(result.counter_totals.items())),
    }
    (out_dir / "summary.json").write_bytes(
        (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode()
    )
    with open(out_dir / "timings.log", "w") as fh:
        fh.write(f"wall_clock_seconds {result.wall_clock:.6f}\n")
    return out_dir
