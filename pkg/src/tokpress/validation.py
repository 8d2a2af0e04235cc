"""Input validation helpers shared by the estimator layer and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .metrics import ScoreVector
from .model import AttentionBundle, TokenSet


def check_token_set(value) -> TokenSet:
    """Accept a TokenSet, or coerce a 2-D array into a single-frame 1xN grid."""
    if isinstance(value, TokenSet):
        return value
    arr = np.asarray(value)
    if arr.ndim == 2:
        return TokenSet(data=arr, frames=1, grid=(1, arr.shape[0]))
    raise ShapeMismatch(
        "expected a TokenSet or an (n_tokens, dim) array"
    )


def check_bundle(bundle, tokens: TokenSet) -> AttentionBundle:
    if not isinstance(bundle, AttentionBundle):
        raise ShapeMismatch("expected an AttentionBundle")
    bundle.check_matches(tokens)
    return bundle


def check_scores(scores, tokens: TokenSet) -> ScoreVector:
    if not isinstance(scores, ScoreVector):
        raise ShapeMismatch("expected a ScoreVector")
    if len(scores) != tokens.n_tokens:
        raise ShapeMismatch(
            f"scores cover {len(scores)} tokens, set has {tokens.n_tokens}"
        )
    return scores
