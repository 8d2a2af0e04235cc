"""Media loading and the export/convert operations."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .dumpwriter import write_token_dump
from .errors import BadArchive
from .toyencoder import build_encoder


def load_frames(path) -> np.ndarray:
    """Load an image or a video as a (frames, H, W, C) float array.

    PNG/JPEG and friends load through Pillow as single frames; ``.npy``
    arrays may be (H, W), (H, W, C), (F, H, W), or (F, H, W, C).
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim == 2:
            arr = arr[None, :, :, None]
        elif arr.ndim == 3:
            # ambiguous: trailing small axis means channels of one frame
            if arr.shape[-1] <= 4:
                arr = arr[None]
            else:
                arr = arr[:, :, :, None]
        elif arr.ndim != 4:
            raise BadArchive(f"{path}: expected 2-4 dims, got {arr.ndim}")
        return arr.astype(np.float64)
    from PIL import Image

    with Image.open(path) as img:
        frame = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return frame[None]


def export_media(
    model_id: str,
    media_path,
    out_path,
    layer: int,
    dim: int = 32,
    grid: tuple[int, int] = (4, 4),
    depth: int = 2,
    seed: int = 0,
    text_rows: int = 0,
    cls_fallback: bool = False,
) -> dict:
    """Run the encoder over every frame and write one dump.

    Frames are laid out frame-major. The classifier attention of a video
    concatenates per-frame heads scaled by 1/frames so the full vector
    still sums to one. Returns a small summary dict.
    """
    frames = load_frames(media_path)
    n_channels = frames.shape[-1]
    encoder = build_encoder(
        model_id, dim=dim, grid=grid, depth=depth, seed=seed, n_channels=n_channels
    )
    token_blocks = []
    cls_blocks = []
    for frame in frames:
        out = encoder.encode(frame, layer, cls_fallback=cls_fallback)
        token_blocks.append(out.tokens)
        if out.cls_attention is not None:
            cls_blocks.append(out.cls_attention)
    tokens = np.concatenate(token_blocks)
    cls = None
    if cls_blocks:
        cls = np.concatenate(cls_blocks) / len(frames)
    text = encoder.text_attention(tokens, text_rows) if text_rows else None
    write_token_dump(
        out_path,
        tokens,
        frames=len(frames),
        grid=encoder.grid,
        cls_attention=cls,
        text_attention=text,
    )
    return {
        "frames": len(frames),
        "grid": encoder.grid,
        "dim": dim,
        "layer": layer,
        "cls": cls is not None,
        "text_rows": text_rows,
    }


def convert_archive(
    archive_path,
    out_path,
    frames: Optional[int] = None,
    grid: Optional[tuple[int, int]] = None,
) -> dict:
    """Convert a pre-existing ``.npz`` tensor archive into a dump.

    Expected keys: ``tokens`` as (n, dim) or (frames, grid_h, grid_w,
    dim); optional ``cls`` (n,) and ``text`` (n_text, n). Metadata keys
    ``frames``, ``grid_h``, ``grid_w`` may live in the archive or be
    passed explicitly; 4-D token arrays carry their own layout and are
    flattened frame-major.
    """
    with np.load(archive_path) as data:
        if "tokens" not in data:
            raise BadArchive(f"{archive_path}: missing 'tokens'")
        tokens = np.asarray(data["tokens"])
        cls = np.asarray(data["cls"]) if "cls" in data else None
        text = np.asarray(data["text"]) if "text" in data else None
        meta = {
            key: int(data[key]) for key in ("frames", "grid_h", "grid_w") if key in data
        }
    if tokens.ndim == 4:
        f, gh, gw, _dim = tokens.shape
        frames, grid = f, (gh, gw)
        tokens = tokens.reshape(f * gh * gw, -1)
    elif tokens.ndim == 2:
        if frames is None:
            frames = meta.get("frames", 1)
        if grid is None:
            if "grid_h" in meta and "grid_w" in meta:
                grid = (meta["grid_h"], meta["grid_w"])
            else:
                per_frame = tokens.shape[0] // frames
                grid = (1, per_frame)
    else:
        raise BadArchive(f"{archive_path}: tokens must be 2-D or 4-D")
    if cls is not None:
        cls = cls.reshape(-1)
    write_token_dump(
        out_path, tokens, frames=frames, grid=grid, cls_attention=cls, text_attention=text
    )
    return {"frames": frames, "grid": grid, "n_tokens": tokens.shape[0]}
