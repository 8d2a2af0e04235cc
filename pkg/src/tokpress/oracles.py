"""Brute-force reference implementations for the fast operators.

Each oracle solves the same problem as a production operator by
exhaustive enumeration, sharing nothing with the code path it checks.
They are only tractable on tiny instances, which is exactly what the
regression suites and the ``oracle`` CLI subcommand feed them.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from .model import SegmentPartition
from .temporal import FrameSimSeries


def exhaustive_maxmin_subsets(
    dist: np.ndarray, k: int
) -> tuple[float, list[tuple[int, ...]]]:
    """All k-subsets maximizing the minimum pairwise distance.

    Returns the optimal objective and every optimal subset (sorted index
    tuples, in lexicographic order). Intended for n <= ~10.
    """
    if k < 2:
        raise ValueError("max-min objective needs k >= 2")
    n = dist.shape[0]
    best = -np.inf
    winners: list[tuple[int, ...]] = []
    for subset in itertools.combinations(range(n), k):
        obj = min(dist[i][j] for i, j in itertools.combinations(subset, 2))
        if obj > best:
            best = obj
            winners = [subset]
        elif obj == best:
            winners.append(subset)
    return float(best), winners


def brute_force_partition(
    series: FrameSimSeries, max_segments: int
) -> tuple[Fraction, tuple[int, ...]]:
    """Optimal frame partition by enumerating every boundary set.

    Maximizes the sum over segments of mean adjacent similarity
    (singletons count 1), over partitions into at most ``max_segments``
    contiguous segments. Exact rational arithmetic; ties resolve to the
    lexicographically smallest boundary list. Returns (objective, ends).
    """
    f = series.n_frames
    exact = [Fraction(float(v)) for v in series.values]
    best_obj: Fraction | None = None
    best_ends: tuple[int, ...] | None = None
    for n_seg in range(1, max_segments + 1):
        for cuts in itertools.combinations(range(1, f), n_seg - 1):
            ends = cuts + (f,)
            start = 0
            obj = Fraction(0)
            for end in ends:
                pairs = end - start - 1
                if pairs == 0:
                    obj += 1
                else:
                    total = Fraction(0)
                    for i in range(start, end - 1):
                        total += exact[i]
                    obj += total / pairs
                start = end
            if best_obj is None or obj > best_obj or (obj == best_obj and ends < best_ends):
                best_obj, best_ends = obj, ends
    assert best_obj is not None and best_ends is not None
    return best_obj, best_ends


def partition_to_ends(partition: SegmentPartition) -> tuple[int, ...]:
    return partition.boundaries
