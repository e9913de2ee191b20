"""Randomized verification suites comparing the recursions and the search to brute force.

Each suite returns a list of :class:`Failure`; an empty list means it passed.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import ctc, search
from .core import NEG_INF, DecoderConfig, PosteriorGrid
from .ctc import Window, init_state, prefix_score_step
from .oracle import oracle_exact_score, oracle_prefix_score
from .scorers import TableScorer

MUTATIONS = ("none", "window-start")


@dataclass(frozen=True)
class Failure:
    suite: str
    seed: int
    detail: str

    def __str__(self):
        return f"[{self.suite}] seed={self.seed}: {self.detail}"


def random_tiny_grid(rng: np.random.Generator, max_frames: int, max_vocab: int) -> PosteriorGrid:
    """Dirichlet rows, so every label sequence that fits has non-zero mass."""
    t = int(rng.integers(1, max_frames + 1))
    c = int(rng.integers(1, max_vocab + 1))
    return PosteriorGrid.from_probs(rng.dirichlet(np.ones(c + 1), size=t))


def prefix_chain(grid: PosteriorGrid, max_len: int) -> Iterator[tuple]:
    """Yield ``(prefix, psi, state)`` for every prefix of length 1..max_len, depth first."""
    n_tokens = grid.vocab - 1
    stack = [((), init_state(grid))]
    while stack:
        prefix, state = stack.pop()
        if len(prefix) == max_len:
            continue
        last = prefix[-1] if prefix else None
        for c in range(n_tokens):
            psi, child = prefix_score_step(state, last, c, grid)
            yield prefix + (c,), psi, child
            stack.append((prefix + (c,), child))


def _close(a: float, b: float, tol: float) -> bool:
    if a <= NEG_INF / 2 or b <= NEG_INF / 2:
        return a <= NEG_INF / 2 and b <= NEG_INF / 2
    return abs(a - b) <= tol


def prefix_suite(trials: int, seed: int = 0, max_frames: int = 6, max_vocab: int = 3,
                 max_prefix: int = 4, tol: float = 1e-6) -> list:
    """Recursive prefix and exact scores against alignment enumeration."""
    failures = []
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        grid = random_tiny_grid(rng, max_frames, max_vocab)
        for prefix, psi, state in prefix_chain(grid, max_prefix):
            want = oracle_prefix_score(prefix, grid)
            if not _close(psi, want, tol):
                failures.append(Failure("prefix", k, f"prefix {prefix}: got {psi:.9g}, "
                                                     f"want {want:.9g}"))
                break
            got = ctc.eos_score(ctc.extend_state(state, grid.log_probs(), grid.num_frames))
            want = oracle_exact_score(prefix, grid)
            if not _close(got, want, tol):
                failures.append(Failure("prefix", k, f"exact {prefix}: got {got:.9g}, "
                                                     f"want {want:.9g}"))
                break
    return failures


def partition_suite(trials: int, seed: int = 0, max_frames: int = 6, max_vocab: int = 3,
                    max_prefix: int = 3, tol: float = 1e-9) -> list:
    """A prefix's mass splits into its exact mass plus the masses of its one-token extensions."""
    failures = []
    for k in range(trials):
        rng = np.random.default_rng([seed, k, 1])
        grid = random_tiny_grid(rng, max_frames, max_vocab)
        lp = grid.log_probs()
        nodes = [((), 0.0, init_state(grid))] + list(prefix_chain(grid, max_prefix))
        for prefix, psi, state in nodes:
            full = ctc.extend_state(state, lp, grid.num_frames)
            total = math.exp(ctc.eos_score(full))
            for c in range(grid.vocab - 1):
                total += math.exp(prefix_score_step(state, prefix[-1] if prefix else None, c,
                                                    grid)[0])
            if abs(total - math.exp(psi)) > tol:
                failures.append(Failure("partition", k, f"prefix {prefix}: parts sum to "
                                                        f"{total:.12g}, whole is {math.exp(psi):.12g}"))
                break
    return failures


def exhaustive_best(grid: PosteriorGrid, scorer, ctc_weight: float, max_len: int) -> tuple:
    """Best complete hypothesis of length below ``max_len`` by enumeration."""
    n_tokens = grid.vocab - 1
    best, best_seq = -math.inf, None
    for n in range(max_len):
        for seq in itertools.product(range(n_tokens), repeat=n):
            att = sum(scorer.score("", seq[:i])[seq[i]] for i in range(n))
            att += scorer.score("", seq)[n_tokens]
            joint = ctc_weight * oracle_exact_score(seq, grid) + (1 - ctc_weight) * att
            if joint > best:
                best, best_seq = joint, seq
    return best, best_seq


def beam_suite(trials: int, seed: int = 0, max_frames: int = 5, max_vocab: int = 3,
               weights=(0.0, 0.5, 1.0), tol: float = 1e-9) -> list:
    """With a beam wide enough to keep everything, search finds the exhaustive optimum."""
    failures = []
    for k in range(trials):
        rng = np.random.default_rng([seed, k, 2])
        grid = random_tiny_grid(rng, max_frames, max_vocab)
        n_tokens = grid.vocab - 1
        scorer = TableScorer.random(n_tokens, 2, seed=int(rng.integers(2 ** 31)))
        for lam in weights:
            cfg = DecoderConfig(beam_width=n_tokens ** grid.num_frames, ctc_weight=lam,
                                margin_m1=math.inf, eos_mode="baseline")
            got = search.beam_search(grid, scorer, cfg)
            want, seq = exhaustive_best(grid, scorer, lam, cfg.max_steps(grid.num_frames))
            if abs(got.joint_logp - want) > tol:
                failures.append(Failure("beam", k, f"lambda={lam}: search {got.tokens} "
                                                   f"{got.joint_logp:.9g}, best {list(seq)} "
                                                   f"{want:.9g}"))
                break
    return failures


def _late_window(tau_prev, tau_tilde_prev, m1, m2, step, num_frames):
    w = _original_window_for(tau_prev, tau_tilde_prev, m1, m2, step, num_frames)
    return Window(min(w.s + 1, w.e), w.e)


_original_window_for = ctc.window_for


@contextlib.contextmanager
def mutation(name: Optional[str]) -> Iterator[None]:
    """Temporarily inject a known fault so the suites can prove they catch it.

    ``window-start`` starts every CTC window one frame late, dropping the first frame
    of each prefix sum.
    """
    if name in (None, "none"):
        yield
        return
    if name != "window-start":
        raise ValueError(f"unknown mutation {name!r}; expected one of {MUTATIONS}")
    ctc.window_for, search.window_for = _late_window, _late_window
    try:
        yield
    finally:
        ctc.window_for = search.window_for = _original_window_for


def run_all(trials: int, seed: int = 0, max_frames: int = 6, max_vocab: int = 3,
            mutate: Optional[str] = None) -> dict:
    """Run every suite; returns ``{suite name: failures}``."""
    # exhaustive search over the beam grows as |C|^T; keep it tractable
    beam_frames = min(max_frames, 5)
    with mutation(mutate):
        return {
            "prefix": prefix_suite(trials, seed, max_frames, max_vocab),
            "partition": partition_suite(trials, seed, max_frames, max_vocab),
            "beam": beam_suite(trials, seed, beam_frames, max_vocab),
        }
