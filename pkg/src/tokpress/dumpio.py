"""Binary tensor-dump file format.

Little-endian layout::

    magic   "TOKD" (4 bytes)
    u32     version (= 1)
    u32     dim
    u32     frames
    u32     grid_h
    u32     grid_w
    u32     n_text
    u8      flags        bit0 cls vector, bit1 text attention, bit2 weight blob
    payload tokens float32 row-major (frames*grid_h*grid_w x dim)
            [cls float32 (n_tokens)]          if bit0
            [text float32 (n_text x n_tokens)] if bit1
    u32     CRC32 of payload

Weight blobs reuse the header with ``frames = 1, grid_h = rows,
grid_w = 1, dim = cols`` and flag bit2 set. A second, simpler container
for calibration/weight matrices is a 16-byte dims header (u64 rows,
u64 cols) followed by float32 data; see :func:`write_matrix`.

Round trips are bit-exact; non-finite values are rejected at the
I/O boundary in both directions.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedDump,
    VersionMismatch,
)
from .model import AttentionBundle, TokenSet

MAGIC = b"TOKD"
VERSION = 1
FLAG_CLS = 0x01
FLAG_TEXT = 0x02
FLAG_WEIGHT = 0x04

_HEADER = struct.Struct("<4s6IB")
MATRIX_HEADER = struct.Struct("<2Q")


def _require_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_dump(path, tokens: TokenSet, bundle: Optional[AttentionBundle] = None) -> None:
    """Write a fresh (full-grid) token set and optional attention to ``path``."""
    if not tokens.is_full_grid or not np.all(tokens.weights == 1.0):
        raise ShapeMismatch("dump format stores fresh full-grid token sets only")
    _require_finite(tokens.data, "tokens")
    flags = 0
    n_text = 0
    parts = [_f32_bytes(tokens.data)]
    if bundle is not None:
        bundle.check_matches(tokens)
        if bundle.cls_to_patch is not None:
            _require_finite(bundle.cls_to_patch, "cls attention")
            flags |= FLAG_CLS
            parts.append(_f32_bytes(bundle.cls_to_patch))
        if bundle.text_to_visual is not None:
            _require_finite(bundle.text_to_visual, "text attention")
            flags |= FLAG_TEXT
            n_text = bundle.text_to_visual.shape[0]
            parts.append(_f32_bytes(bundle.text_to_visual))
    payload = b"".join(parts)
    header = _HEADER.pack(
        MAGIC, VERSION, tokens.dim, tokens.frames, tokens.grid[0], tokens.grid[1],
        n_text, flags,
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))


def _read_validated(path) -> tuple[int, int, int, int, int, int, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        if raw[:4] != MAGIC:
            raise BadMagic(f"{path}: not a token dump")
        raise TruncatedDump(f"{path}: file shorter than header")
    magic, version, dim, frames, grid_h, grid_w, n_text, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    payload = raw[_HEADER.size:-4]
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatch(f"{path}: payload CRC32 mismatch")
    n_tokens = frames * grid_h * grid_w
    expect = n_tokens * dim * 4
    if flags & FLAG_CLS:
        expect += n_tokens * 4
    if flags & FLAG_TEXT:
        expect += n_text * n_tokens * 4
    if len(payload) != expect:
        raise TruncatedDump(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return dim, frames, grid_h, grid_w, n_text, flags, payload


def read_dump(path) -> tuple[TokenSet, Optional[AttentionBundle]]:
    """Read and validate a token dump. Returns the set and any attention."""
    dim, frames, grid_h, grid_w, n_text, flags, payload = _read_validated(path)
    if flags & FLAG_WEIGHT:
        raise ShapeMismatch(f"{path}: weight blob, use read_weight_dump")
    n_tokens = frames * grid_h * grid_w
    offset = 0

    def take(count: int) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        return arr

    data = take(n_tokens * dim).reshape(n_tokens, dim)
    _require_finite(data, "tokens")
    cls = text = None
    if flags & FLAG_CLS:
        cls = take(n_tokens).astype(np.float64)
        _require_finite(cls, "cls attention")
    if flags & FLAG_TEXT:
        text = take(n_text * n_tokens).reshape(n_text, n_tokens).astype(np.float64)
        _require_finite(text, "text attention")
    tokens = TokenSet(data=data, frames=frames, grid=(grid_h, grid_w))
    bundle = None
    if cls is not None or text is not None:
        bundle = AttentionBundle(cls_to_patch=cls, text_to_visual=text)
    return tokens, bundle


def write_weight_dump(path, weights: np.ndarray) -> None:
    """Write a weight matrix (rows x cols float32) as a flag-bit2 dump."""
    w = np.ascontiguousarray(weights, dtype=np.float32)
    if w.ndim != 2:
        raise ShapeMismatch("weight blob must be 2-D")
    _require_finite(w, "weights")
    rows, cols = w.shape
    payload = _f32_bytes(w)
    header = _HEADER.pack(MAGIC, VERSION, cols, 1, rows, 1, 0, FLAG_WEIGHT)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))


def read_weight_dump(path) -> np.ndarray:
    """Read a flag-bit2 weight blob back as a (rows, cols) float32 matrix."""
    dim, frames, grid_h, grid_w, n_text, flags, payload = _read_validated(path)
    if not flags & FLAG_WEIGHT:
        raise ShapeMismatch(f"{path}: token dump, use read_dump")
    rows = frames * grid_h * grid_w
    w = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    _require_finite(w, "weights")
    return w


def write_matrix(path, matrix: np.ndarray) -> None:
    """Write a plain float32 matrix with a 16-byte dims header."""
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeMismatch("matrix file stores 2-D arrays")
    _require_finite(m, "matrix")
    Path(path).write_bytes(MATRIX_HEADER.pack(*m.shape) + _f32_bytes(m))


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < MATRIX_HEADER.size:
        raise TruncatedDump(f"{path}: missing dims header")
    rows, cols = MATRIX_HEADER.unpack_from(raw)
    body = raw[MATRIX_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise TruncatedDump(f"{path}: payload is {len(body)} bytes, expected {rows * cols * 4}")
    m = np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()
    _require_finite(m, "matrix")
    return m


def load_weight_matrix(path) -> np.ndarray:
    """Read a weight matrix from either container, sniffing the magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_weight_dump(path)
    return read_matrix(path)
