"""Measurement layer: score aggregation, multi-turn consistency, cost proxy.

Benchmark scores arrive pre-normalized (the harness never rescales an
axis); aggregation reports the unweighted mean and its ratio to the
uncompressed upper bound. Multi-turn consistency is the conditional
probability of a correct second turn given a correct first turn,
estimated by counting. Inference cost is an analytical proxy: quadratic
attention plus linear MLP prefill FLOPs, weight bytes under the chosen
bit width, and KV bytes proportional to token count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DuplicateQuestions, EmptyInput, InvalidParameter, ShapeMismatch
from .quant import QuantSpec

FLOAT_PRECISION = 6  # fixed precision for emitted reports


@dataclass(frozen=True)
class BenchScore:
    """One benchmark result next to the uncompressed model's score."""

    benchmark: str
    score: float
    upper_bound: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidParameter(f"{self.benchmark}: score must be finite")
        if not (math.isfinite(self.upper_bound) and self.upper_bound > 0):
            raise InvalidParameter(f"{self.benchmark}: upper bound must be positive")


@dataclass(frozen=True)
class AggregateResult:
    acc: float
    rel_percent: float

    def formatted(self) -> tuple[str, str]:
        """One-decimal display form used in reports."""
        return f"{self.acc:.1f}", f"{self.rel_percent:.1f}"


def aggregate(scores: Sequence[BenchScore]) -> AggregateResult:
    """Unweighted mean score and its percentage of the upper-bound mean."""
    if not scores:
        raise EmptyInput("no benchmark scores to aggregate")
    acc = sum(s.score for s in scores) / len(scores)
    upper = sum(s.upper_bound for s in scores) / len(scores)
    return AggregateResult(acc=acc, rel_percent=100.0 * acc / upper)


@dataclass(frozen=True)
class MultiTurnRecord:
    """Correctness bits for one two-turn dialogue over one image."""

    image_id: str
    q1_correct: bool
    q2_correct: bool
    order: str = "original"  # original | swapped

    def __post_init__(self):
        if self.order not in ("original", "swapped"):
            raise InvalidParameter(f"unknown order tag {self.order!r}")


def conditional_accuracy(records: Iterable[MultiTurnRecord]) -> Optional[float]:
    """Second-turn accuracy conditioned on a correct first turn.

    Counts ``N(first and second correct) / N(first correct)``. With no
    correct first turns the ratio is undefined and ``None`` is returned;
    never zero, which would silently rank the method worst.
    """
    n1 = n12 = 0
    for rec in records:
        if rec.q1_correct:
            n1 += 1
            if rec.q2_correct:
                n12 += 1
    if n1 == 0:
        return None
    return n12 / n1


@dataclass(frozen=True)
class DialogueTask:
    image_id: str
    first_question: str
    second_question: str
    order: str


def build_pairs(questions: Sequence[tuple[str, str, str]]) -> list[DialogueTask]:
    """Two ordered dialogue tasks per image, forward and swapped.

    Each question then appears exactly once in the first turn and once
    in the second, removing order effects from the comparison.
    """
    tasks: list[DialogueTask] = []
    for image_id, q_a, q_b in questions:
        if not q_a or not q_b or q_a == q_b:
            raise DuplicateQuestions(
                f"image {image_id!r} needs two distinct nonempty questions"
            )
        tasks.append(DialogueTask(image_id, q_a, q_b, "original"))
        tasks.append(DialogueTask(image_id, q_b, q_a, "swapped"))
    return tasks


@dataclass(frozen=True)
class CostModel:
    """Coefficients of the analytical inference-cost proxy."""

    hidden_dim: int
    n_layers: int
    n_params: float
    kv_bytes_per_token: float
    c_attn: float = 2.0
    c_mlp: float = 8.0
    baseline_bytes_per_param: float = 2.0  # half precision

    def __post_init__(self):
        values = (
            self.hidden_dim, self.n_layers, self.n_params, self.kv_bytes_per_token,
            self.c_attn, self.c_mlp, self.baseline_bytes_per_param,
        )
        if any(v <= 0 for v in values):
            raise InvalidParameter("all cost-model coefficients must be positive")


@dataclass(frozen=True)
class CostEstimate:
    prefill_flops: float
    weight_bytes: float
    kv_bytes: float


def cost_estimate(
    model: CostModel, n_tokens: int, quant: Optional[QuantSpec] = None
) -> CostEstimate:
    """Prefill FLOPs, weight bytes, and KV bytes for ``n_tokens`` input tokens.

    Token reduction shrinks FLOPs (quadratically in the attention term)
    and the KV cache; quantization shrinks weight bytes by ``bits/16``
    against the half-precision baseline and leaves the KV cache alone.
    """
    if n_tokens < 1:
        raise InvalidParameter("n_tokens must be >= 1")
    d, n = model.hidden_dim, n_tokens
    flops = model.n_layers * (model.c_attn * n * n * d + model.c_mlp * n * d * d)
    bytes_per_param = model.baseline_bytes_per_param
    if quant is not None:
        bytes_per_param *= quant.bits / 16.0
    return CostEstimate(
        prefill_flops=float(flops),
        weight_bytes=float(model.n_params * bytes_per_param),
        kv_bytes=float(n * model.kv_bytes_per_token),
    )


# --------------------------------------------------------------------------
# deterministic report emission and CSV ingestion


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.{FLOAT_PRECISION}f}"
    return str(value)


def render_report(
    rows: Sequence[dict], fmt: str = "csv", fields: Optional[Sequence[str]] = None
) -> bytes:
    """Render rows with a stable column order and fixed float precision.

    Deterministic: the same rows always produce the same bytes. Column
    order follows ``fields`` (or the first row); all rows must share the
    same keys. An empty row set with ``fields`` yields a header-only CSV.
    """
    if fmt == "csv":
        buf = io.StringIO()
        if fields is None and rows:
            fields = list(rows[0].keys())
        if fields is not None:
            writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                if list(row.keys()) != list(fields):
                    raise ShapeMismatch("all report rows must share one schema")
                writer.writerow({k: _format_value(v) for k, v in row.items()})
        return buf.getvalue().encode()
    if fmt == "json":
        payload = [
            {k: (round(v, FLOAT_PRECISION) if isinstance(v, float) else v) for k, v in row.items()}
            for row in rows
        ]
        return (json.dumps(payload, indent=2) + "\n").encode()
    raise InvalidParameter(f"unknown report format {fmt!r}")


def emit_report(
    rows: Sequence[dict], path, fmt: str = "csv", fields: Optional[Sequence[str]] = None
) -> None:
    Path(path).write_bytes(render_report(rows, fmt, fields))


def load_bench_scores(path) -> dict[str, list[BenchScore]]:
    """Read (benchmark, method, score, upper_bound) rows grouped by method."""
    by_method: dict[str, list[BenchScore]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"benchmark", "method", "score", "upper_bound"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ShapeMismatch(
                f"{path}: need columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row in reader:
            by_method.setdefault(row["method"], []).append(
                BenchScore(
                    benchmark=row["benchmark"],
                    score=float(row["score"]),
                    upper_bound=float(row["upper_bound"]),
                )
            )
    return by_method


_TRUTHY = {"1", "true", "yes"}
_FALSY = {"0", "false", "no"}


def _parse_bool(text: str, where: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUTHY:
        return True
    if lowered in _FALSY:
        return False
    raise ShapeMismatch(f"{where}: cannot parse boolean {text!r}")


def load_multiturn_records(path) -> list[MultiTurnRecord]:
    """Read (image_id, order, q1_correct, q2_correct) rows."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"image_id", "order", "q1_correct", "q2_correct"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ShapeMismatch(
                f"{path}: need columns {sorted(required)}, got {reader.fieldnames}"
            )
        for i, row in enumerate(reader):
            records.append(
                MultiTurnRecord(
                    image_id=row["image_id"],
                    q1_correct=_parse_bool(row["q1_correct"], f"{path}:{i}"),
                    q2_correct=_parse_bool(row["q2_correct"], f"{path}:{i}"),
                    order=row["order"],
                )
            )
    return records
