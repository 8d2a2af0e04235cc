"""Standalone writer for the tokpress tensor-dump format.

Implemented against the format description, independently of the engine
package: little-endian header ``"TOKD", u32 version=1, u32 dim,
u32 frames, u32 grid_h, u32 grid_w, u32 n_text, u8 flags``; float32
payload (tokens row-major, optional cls vector, optional text-to-visual
matrix); trailing CRC32 of the payload. Flag bits: 0 cls, 1 text.

Keeping the writer independent means every emitted file exercises the
engine's read-side validation for real.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"TOKD"
VERSION = 1
FLAG_CLS = 0x01
FLAG_TEXT = 0x02

_HEADER = struct.Struct("<4s6IB")


def write_token_dump(
    path,
    tokens: np.ndarray,
    frames: int,
    grid: tuple[int, int],
    cls_attention: Optional[np.ndarray] = None,
    text_attention: Optional[np.ndarray] = None,
) -> None:
    """Write one dump. ``tokens`` is (frames*grid_h*grid_w, dim)."""
    tokens = np.ascontiguousarray(tokens, dtype="<f4")
    if tokens.ndim != 2:
        raise ValueError("tokens must be 2-D")
    n_tokens, dim = tokens.shape
    grid_h, grid_w = int(grid[0]), int(grid[1])
    if n_tokens != frames * grid_h * grid_w:
        raise ValueError(
            f"{n_tokens} tokens do not fill {frames} frames of {grid_h}x{grid_w}"
        )
    if not np.all(np.isfinite(tokens)):
        raise ValueError("tokens must be finite")
    flags = 0
    n_text = 0
    parts = [tokens.tobytes()]
    if cls_attention is not None:
        cls_attention = np.ascontiguousarray(cls_attention, dtype="<f4")
        if cls_attention.shape != (n_tokens,):
            raise ValueError("cls attention must have one entry per token")
        flags |= FLAG_CLS
        parts.append(cls_attention.tobytes())
    if text_attention is not None:
        text_attention = np.ascontiguousarray(text_attention, dtype="<f4")
        if text_attention.ndim != 2 or text_attention.shape[1] != n_tokens:
            raise ValueError("text attention must be (n_text, n_tokens)")
        flags |= FLAG_TEXT
        n_text = text_attention.shape[0]
        parts.append(text_attention.tobytes())
    payload = b"".join(parts)
    header = _HEADER.pack(MAGIC, VERSION, dim, frames, grid_h, grid_w, n_text, flags)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))
