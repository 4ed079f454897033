"""Worker-count resolution shared by the scan, optimizer and QKD code."""
from __future__ import annotations

import os

ENV_VAR = "NU_ENTANGLE_THREADS"


def resolve_workers(workers: int | None = None) -> int:
    """Explicit ``workers`` wins, then ``NU_ENTANGLE_THREADS``; 0 means all CPUs."""
    if workers is None:
        raw = os.environ.get(ENV_VAR, "0").strip() or "0"
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    if workers < 0:
        raise ValueError("worker count must be >= 0")
    if workers == 0:
        workers = os.cpu_count() or 1
    return workers
