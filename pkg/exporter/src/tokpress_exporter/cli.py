"""Command-line exporter mirroring the export/convert parameters."""

from __future__ import annotations

import sys

import click

from .errors import ExporterError
from .export import convert_archive, export_media


@click.group()
def main():
    """Dump vision-encoder tokens and attention into tensor-dump files."""


@main.command("export")
@click.argument("media_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_id", default="toy", show_default=True,
              help="Registered encoder id (toy, toy-nocls).")
@click.option("--layer", type=int, default=2, show_default=True,
              help="Capture point: 0 = embeddings, k = after k mixing layers.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--grid-h", type=int, default=4, show_default=True)
@click.option("--grid-w", type=int, default=4, show_default=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--text-rows", type=int, default=0, show_default=True,
              help="Also synthesize this many text-to-visual attention rows.")
@click.option("--cls-fallback", is_flag=True,
              help="Attach a stand-in classifier head when the tower has none.")
def export_cmd(media_path, model_id, layer, out_path, dim, grid_h, grid_w, depth,
               seed, text_rows, cls_fallback):
    """Encode MEDIA_PATH (image or .npy frame stack) into a dump."""
    try:
        summary = export_media(
            model_id, media_path, out_path, layer,
            dim=dim, grid=(grid_h, grid_w), depth=depth, seed=seed,
            text_rows=text_rows, cls_fallback=cls_fallback,
        )
    except (ExporterError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"wrote {out_path}: {summary['frames']} frame(s) of "
        f"{summary['grid'][0]}x{summary['grid'][1]}, dim {summary['dim']}, "
        f"layer {summary['layer']}"
    )


@main.command("convert")
@click.argument("archive_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--frames", type=int, default=None, help="Frame count for flat 2-D tokens.")
@click.option("--grid-h", type=int, default=None)
@click.option("--grid-w", type=int, default=None)
def convert_cmd(archive_path, out_path, frames, grid_h, grid_w):
    """Convert a .npz tensor archive into a dump."""
    grid = (grid_h, grid_w) if grid_h and grid_w else None
    try:
        summary = convert_archive(archive_path, out_path, frames=frames, grid=grid)
    except (ExporterError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {out_path}: {summary['n_tokens']} tokens")


if __name__ == "__main__":
    main()
