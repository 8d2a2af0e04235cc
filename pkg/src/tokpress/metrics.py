"""Importance and redundancy scoring.

Two families feed the reduction operators: attention-based scores taken
verbatim from dumped attention, and similarity-based scores derived from
pairwise cosine geometry. Scores are never renormalized; every consumer
is rank-based, so monotone transforms are irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import counters
from .errors import MissingClsAttention, MissingTextAttention, ShapeMismatch
from .model import AttentionBundle, TokenSet

ZERO_NORM_EPS = 1e-12


class ScoreSource(str, Enum):
    CLS_ATTENTION = "cls_attention"
    TEXT_ATTENTION = "text_attention"
    DIVERSITY = "diversity"
    REDUNDANCY = "redundancy"


class TextReduce(str, Enum):
    MEAN = "mean"
    LAST_ROW = "last_row"


@dataclass(frozen=True)
class ScoreVector:
    """Per-token importance scores; higher means more important."""

    scores: np.ndarray
    source: ScoreSource

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ShapeMismatch("scores must be a vector")
        if not np.all(np.isfinite(scores)):
            raise ShapeMismatch("scores must be finite")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "source", ScoreSource(self.source))

    def __len__(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class SimMatrix:
    """Symmetric cosine-similarity matrix with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatch("similarity matrix must be square")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def unit_rows(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize; zero-norm rows come back as zero vectors.

    Returns (unit rows, boolean mask of zero-norm rows).
    """
    x = np.asarray(data, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = norms < ZERO_NORM_EPS
    safe = np.where(zero, 1.0, norms)
    return x / safe[:, None], zero


def cosine_sim(tokens: TokenSet) -> SimMatrix:
    """All-pairs cosine similarity.

    Zero-norm rows are defined as dissimilar to everything (0 off the
    diagonal, 1 on it), which keeps padded dumps from propagating NaNs.
    """
    unit, zero = unit_rows(tokens.data)
    n = tokens.n_tokens
    counters.add(counters.SIM_EVALS, n * n)
    s = unit @ unit.T
    np.clip(s, -1.0, 1.0, out=s)
    if zero.any():
        s[zero, :] = 0.0
        s[:, zero] = 0.0
    s = (s + s.T) / 2.0
    np.fill_diagonal(s, 1.0)
    return SimMatrix(s)


def cls_scores(bundle: AttentionBundle) -> ScoreVector:
    """Classifier-token attention over patches, taken verbatim."""
    if bundle.cls_to_patch is None:
        raise MissingClsAttention("bundle carries no cls-to-patch attention")
    return ScoreVector(bundle.cls_to_patch, ScoreSource.CLS_ATTENTION)


def text_scores(bundle: AttentionBundle, reduce: TextReduce | str = TextReduce.MEAN) -> ScoreVector:
    """Question-prompt attention over visual tokens.

    ``mean`` averages the columns over all text rows; ``last_row`` takes
    the final text row verbatim.
    """
    if bundle.text_to_visual is None:
        raise MissingTextAttention("bundle carries no text-to-visual attention")
    reduce = TextReduce(reduce)
    if reduce is TextReduce.MEAN:
        scores = bundle.text_to_visual.mean(axis=0)
    else:
        scores = bundle.text_to_visual[-1]
    return ScoreVector(scores, ScoreSource.TEXT_ATTENTION)


def redundancy_scores(sim: SimMatrix) -> ScoreVector:
    """Duplicate-based importance: ``-max_{j != i} S[i, j]``.

    A token closely mirrored by another scores low; with fewer than two
    tokens all scores are zero.
    """
    n = sim.n
    if n < 2:
        return ScoreVector(np.zeros(n), ScoreSource.REDUNDANCY)
    masked = sim.values.copy()
    np.fill_diagonal(masked, -np.inf)
    return ScoreVector(-masked.max(axis=1), ScoreSource.REDUNDANCY)
