"""Command-line interface.

Exit codes: 0 success, 1 oracle/internal failure, 2 configuration error,
3 data error.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline, suites
from .dumpio import FLAG_WEIGHT, read_dump, read_weight_dump
from .errors import ConfigError, DataError, ShapeMismatch
from .evalharness import aggregate, load_bench_scores, render_report


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Token-compression engine for dumped VLM token tensors."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="tokpress-out",
              show_default=True, help="Directory for reports and the manifest.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Parallel workers across dump files.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def run_cmd(config_path, out_dir, workers, seed):
    """Run a pipeline config (or a previously emitted manifest)."""
    try:
        config = pipeline.load_config(config_path)
        if seed is not None:
            config = dataclasses.replace(config, seed=seed)
        result = pipeline.run(config, out_dir=out_dir, workers=workers)
    except ConfigError as exc:
        _fail(2, str(exc))
    except (DataError, FileNotFoundError, OSError) as exc:
        _fail(3, str(exc))
    click.echo(f"processed {len(result.run_rows)} sample runs -> {result.out_dir}")
    for name, value in sorted(result.counter_totals.items()):
        click.echo(f"  {name}: {value}")
    click.echo(f"  wall_clock: {result.wall_clock:.3f}s (timings.log, non-deterministic)")


@main.command("inspect")
@click.argument("dump_path", type=click.Path(exists=True, dir_okay=False))
def inspect_cmd(dump_path):
    """Validate a dump file and print its header and basic stats."""
    try:
        with open(dump_path, "rb") as fh:
            fh.seek(28)
            flags = fh.read(1)
        if flags and flags[0] & FLAG_WEIGHT:
            w = read_weight_dump(dump_path)
            click.echo(f"{dump_path}: weight blob {w.shape[0]}x{w.shape[1]}")
            click.echo(f"  |w| max {np.abs(w).max():.6g}, mean {np.abs(w).mean():.6g}")
            return
        tokens, bundle = read_dump(dump_path)
    except (DataError, ShapeMismatch) as exc:
        _fail(3, str(exc))
    click.echo(
        f"{dump_path}: {tokens.n_tokens} tokens, dim {tokens.dim}, "
        f"{tokens.frames} frame(s) of {tokens.grid[0]}x{tokens.grid[1]}"
    )
    norms = np.linalg.norm(tokens.data.astype(np.float64), axis=1)
    click.echo(f"  norms: min {norms.min():.6g}, max {norms.max():.6g}")
    if bundle is None:
        click.echo("  attention: none")
    else:
        parts = []
        if bundle.cls_to_patch is not None:
            parts.append("cls")
        if bundle.text_to_visual is not None:
            parts.append(f"text({bundle.n_text} rows)")
        click.echo(f"  attention: {', '.join(parts)}")
    click.echo("  checksum: ok")


@main.command("oracle")
@click.argument("suite", type=click.Choice(sorted(suites.SUITES) + ["all"]))
@click.option("--seed", type=int, default=0, show_default=True)
def oracle_cmd(suite, seed):
    """Run brute-force oracle suites against the fast operators."""
    reports = suites.run_suite(suite, seed=seed)
    failed = False
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        click.echo(f"[{status}] {report.name}: {report.detail}")
        failed |= not report.passed
    sys.exit(1 if failed else 0)


@main.command("report")
@click.argument("results_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the report here instead of stdout.")
def report_cmd(results_csv, fmt, out_path):
    """Aggregate a benchmark results CSV into (Acc, Rel) rows."""
    try:
        by_method = load_bench_scores(results_csv)
        rows = []
        for method, scores in by_method.items():
            result = aggregate(scores)
            rows.append(
                {
                    "method": method,
                    "n_benchmarks": len(scores),
                    "acc": result.acc,
                    "rel_percent": result.rel_percent,
                }
            )
    except (DataError, ValueError, OSError) as exc:
        _fail(3, str(exc))
    payload = render_report(rows, fmt)
    if out_path:
        Path(out_path).write_bytes(payload)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(payload.decode(), nl=False)


if __name__ == "__main__":
    main()
