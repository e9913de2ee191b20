"""Brute-force CTC oracles: enumerate every alignment string and collapse it.

Independent of the forward recursion in :mod:`beamlattice.ctc`; only usable on tiny grids.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import NEG_INF, PosteriorGrid

MAX_FRAMES = 12
MAX_ALIGNMENTS = 2 ** 24


class OracleTooLarge(ValueError):
    pass


def collapse(alignment: Sequence[int], blank: int) -> tuple:
    """Merge repeated symbols, then drop blanks."""
    out = []
    prev = None
    for z in alignment:
        if z != prev and z != blank:
            out.append(z)
        prev = z
    return tuple(out)


def _check_size(grid: PosteriorGrid) -> None:
    t, v = grid.num_frames, grid.vocab
    if t > MAX_FRAMES or v ** t > MAX_ALIGNMENTS:
        raise OracleTooLarge(f"{v}^{t} alignments is too many to enumerate")


@lru_cache(maxsize=64)
def _sequence_masses(grid: PosteriorGrid) -> dict:
    probs = np.exp(grid.log_probs()[1:])
    blank = grid.vocab - 1
    masses = defaultdict(float)
    frames = range(grid.num_frames)
    for alignment in itertools.product(range(grid.vocab), repeat=grid.num_frames):
        p = 1.0
        for t in frames:
            p *= probs[t, alignment[t]]
        masses[collapse(alignment, blank)] += p
    return dict(masses)


def sequence_masses(grid: PosteriorGrid) -> dict:
    """Probability of every collapsed label sequence the grid can emit."""
    _check_size(grid)
    return _sequence_masses(grid)


def _log(p: float) -> float:
    return math.log(p) if p > 0 else NEG_INF


def oracle_exact_prob(seq: Sequence[int], grid: PosteriorGrid) -> float:
    return sequence_masses(grid).get(tuple(seq), 0.0)


def oracle_prefix_prob(prefix: Sequence[int], grid: PosteriorGrid) -> float:
    prefix = tuple(prefix)
    n = len(prefix)
    return sum(p for seq, p in sequence_masses(grid).items() if seq[:n] == prefix)


def oracle_exact_score(seq: Sequence[int], grid: PosteriorGrid) -> float:
    """Log mass of alignments collapsing to exactly ``seq``."""
    return _log(oracle_exact_prob(seq, grid))


def oracle_prefix_score(prefix: Sequence[int], grid: PosteriorGrid) -> float:
    """Log mass of alignments whose collapse starts with ``prefix``."""
    return _log(oracle_prefix_prob(prefix, grid))
