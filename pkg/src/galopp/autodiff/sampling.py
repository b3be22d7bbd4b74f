"""Categorical sampling from a probability vector."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np


def categorical_sample(probs: np.ndarray, rng: np.random.Generator) -> Tuple[int, float]:
    """Draw an index from a categorical distribution.

    Returns (index, log probability of that index). The vector must be
    1-D, non-negative and sum to 1 within 1e-6. Sampling inverts the
    cumulative sum, so it is deterministic given the generator state.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("probs must be 1-D")
    if np.any(p < 0.0):
        raise ValueError("probs must be non-negative")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"probs sum to {total}, expected 1 within 1e-6")
    cum = np.cumsum(p)
    u = rng.random() * cum[-1]
    index = int(np.searchsorted(cum, u, side="right"))
    index = min(index, p.size - 1)
    while p[index] == 0.0 and index > 0:
        index -= 1
    return index, math.log(p[index])
