"""Deterministic synthetic vision tower used as the export fixture.

The encoder patchifies an image into a fixed grid, projects cheap patch
statistics into the embedding space with seeded random weights, and runs
a stack of tanh mixing layers. Tokens and attention can be captured
after any layer (0 = the projected embeddings). A classifier-style
attention head is available per layer; the ``with_cls=False`` variant
drops it, and ``cls_fallback`` reattaches a stand-in head that scores
patches by embedding norm for towers without a classifier token.

Everything is a pure function of (seed, architecture dims, input), so
exports are reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import LayerNotFound, UnsupportedArchitecture


def _patch_features(image: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Per-patch channel means, channel stds, and overall mean."""
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    gh, gw = grid
    ph, pw = h // gh, w // gw
    if ph < 1 or pw < 1:
        raise ValueError(f"image {h}x{w} too small for a {gh}x{gw} grid")
    image = image[: ph * gh, : pw * gw].astype(np.float64)
    blocks = image.reshape(gh, ph, gw, pw, c).transpose(0, 2, 1, 3, 4)
    blocks = blocks.reshape(gh * gw, ph * pw, c)
    means = blocks.mean(axis=1)
    stds = blocks.std(axis=1)
    overall = blocks.mean(axis=(1, 2), keepdims=False)[:, None]
    return np.concatenate([means, stds, overall], axis=1)


@dataclass(frozen=True)
class EncoderOutput:
    tokens: np.ndarray  # (n_patches, dim) float32
    cls_attention: Optional[np.ndarray]  # (n_patches,) sums to 1
    layer: int


class ToyEncoder:
    """Tiny deterministic encoder with per-layer capture points."""

    def __init__(self, dim=32, grid=(4, 4), depth=2, seed=0, with_cls=True,
                 n_channels=3):
        self.dim = dim
        self.grid = (int(grid[0]), int(grid[1]))
        self.depth = depth
        self.with_cls = with_cls
        rng = np.random.default_rng(seed)
        feat_dim = 2 * n_channels + 1
        self._proj = rng.normal(scale=1.0 / np.sqrt(feat_dim), size=(feat_dim, dim))
        self._mix = [
            rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, dim)) for _ in range(depth)
        ]
        self._bias = [rng.normal(scale=0.1, size=dim) for _ in range(depth)]
        self._cls_query = [rng.normal(size=dim) for _ in range(depth + 1)]
        self._text_proj = rng.normal(size=(dim, dim))

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    def encode(self, image: np.ndarray, layer: int, cls_fallback: bool = False) -> EncoderOutput:
        """Run the tower on one image, capturing state after ``layer``."""
        if not (0 <= layer <= self.depth):
            raise LayerNotFound(f"layer {layer} outside 0..{self.depth}")
        x = _patch_features(image, self.grid) @ self._proj
        for i in range(layer):
            x = np.tanh(x @ self._mix[i] + self._bias[i])
        cls = None
        if self.with_cls:
            logits = x @ self._cls_query[layer]
            logits -= logits.max()
            cls = np.exp(logits)
            cls /= cls.sum()
        elif cls_fallback:
            # stand-in head for towers without a classifier token:
            # patch salience from embedding norms
            norms = np.linalg.norm(x, axis=1)
            norms -= norms.max()
            cls = np.exp(norms)
            cls /= cls.sum()
        return EncoderOutput(tokens=x.astype(np.float32), cls_attention=cls, layer=layer)

    def text_attention(self, tokens: np.ndarray, n_rows: int) -> np.ndarray:
        """Synthetic question-to-patch attention rows (each sums to 1)."""
        reps = -(-n_rows // self._text_proj.shape[0])
        queries = np.tile(self._text_proj, (reps, 1))[:n_rows]
        logits = queries @ tokens.astype(np.float64).T
        logits -= logits.max(axis=1, keepdims=True)
        rows = np.exp(logits)
        return rows / rows.sum(axis=1, keepdims=True)


ARCHITECTURES = {
    "toy": lambda **kw: ToyEncoder(with_cls=True, **kw),
    "toy-nocls": lambda **kw: ToyEncoder(with_cls=False, **kw),
}


def build_encoder(model_id: str, **kwargs) -> ToyEncoder:
    if model_id not in ARCHITECTURES:
        raise UnsupportedArchitecture(
            f"unknown model {model_id!r}; available: {sorted(ARCHITECTURES)}"
        )
    return ARCHITECTURES[model_id](**kwargs)
