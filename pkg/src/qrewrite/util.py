"""Shared plumbing helpers."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Collapse a (seed, purpose, ...) tuple into one 32-bit stream seed.

    All randomness in the package is derived functionally from tuples like
    (global_seed, purpose, step, index); no stateful stream survives between
    steps, which is what makes checkpoint resumption exact.
    """
    return int(np.random.SeedSequence(parts).generate_state(1)[0])
