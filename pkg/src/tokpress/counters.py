"""Portable operation counters.

Wall-clock timing is hardware-bound, so the pipeline reports abstract
operation counts (pairwise similarity evaluations, DP cell relaxations)
as its efficiency signal. Operators call :func:`add` unconditionally;
the call is a no-op unless a :func:`collect` context is active, which
keeps the pure-function contracts intact.
"""

from __future__ import annotations

import contextlib
from contextvars import ContextVar
from typing import Iterator

SIM_EVALS = "sim_evals"
DP_CELLS = "dp_cells"

_active: ContextVar[dict[str, int] | None] = ContextVar("tokpress_counters", default=None)


def add(name: str, amount: int = 1) -> None:
    """Increment counter ``name`` in the innermost active collection."""
    bucket = _active.get()
    if bucket is not None:
        bucket[name] = bucket.get(name, 0) + int(amount)


@contextlib.contextmanager
def collect() -> Iterator[dict[str, int]]:
    """Collect counters for the duration of the context.

    Yields the mutable dict that accumulates counts; it remains valid
    (and frozen in content) after the context exits.
    """
    bucket: dict[str, int] = {}
    token = _active.set(bucket)
    try:
        yield bucket
    finally:
        _active.reset(token)
