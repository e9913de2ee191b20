"""CTC prefix scoring with blank/non-blank forward variables and time-restricted windows.

Frames are numbered ``1..T``; index 0 of every forward array is a virtual frame before the
first observation. ``gamma_n[t]`` is the log probability that the prefix has been emitted
by frame ``t`` with the alignment sitting on its last label, ``gamma_b[t]`` the same with
the alignment sitting on a blank.

The kernels here work on a stack of hypotheses (rows) and score every token extension in
one pass, looping over frames. A single-utterance search and a batched search feed the
same kernels, so their per-element arithmetic is identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import NEG_INF, PosteriorGrid


class NotACtcLabel(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CtcForwardState:
    """Forward variables of one prefix; valid on frames ``0..hi``."""

    gamma_n: np.ndarray
    gamma_b: np.ndarray
    lo: int
    hi: int
    tau: int = 1
    tau_tilde: int = 1
    prefix_len: int = 0
    last: int = -1

    @property
    def num_frames(self) -> int:
        return self.gamma_n.shape[0] - 1

    @property
    def covered(self) -> tuple:
        return self.lo, self.hi


@dataclass(frozen=True)
class Window:
    s: int
    e: int

    def __post_init__(self):
        if not 1 <= self.s <= self.e:
            raise ValueError(f"invalid window ({self.s}, {self.e})")

    def __len__(self) -> int:
        return self.e - self.s + 1

    def contains(self, other: "Window") -> bool:
        return self.s <= other.s and other.e <= self.e


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def init_state(grid: PosteriorGrid) -> CtcForwardState:
    """Forward variables of the empty prefix: only blanks emitted so far."""
    lp = grid.log_probs()
    gamma_b = np.cumsum(lp[:, -1])
    gamma_b[0] = 0.0
    gamma_b = np.maximum(gamma_b, NEG_INF)
    gamma_n = np.full_like(gamma_b, NEG_INF)
    return CtcForwardState(_frozen(gamma_n), _frozen(gamma_b), lo=0, hi=grid.num_frames)


def window_for(tau_prev: int, tau_tilde_prev: int, m1: float, m2: float, step: int,
               num_frames: int) -> Window:
    """Frames searched for the ``step``-th label given the previous label's time estimates."""
    s = 1 if math.isinf(m1) else tau_prev - int(m1)
    s = max(s, step, 1)
    e = num_frames if math.isinf(m2) else min(tau_tilde_prev + int(m2), num_frames)
    e = max(e, 1)
    if s > e:
        s = e
    return Window(s, e)


def batch_window(windows: Sequence[Window]) -> Window:
    """Smallest window containing all given windows."""
    if not windows:
        raise ValueError("batch_window needs at least one window")
    return Window(min(w.s for w in windows), max(w.e for w in windows))


def extend_rows(gamma_n: np.ndarray, gamma_b: np.ndarray, last: np.ndarray, lp: np.ndarray,
                hi: np.ndarray, target: np.ndarray) -> int:
    """Propagate forward variables past their computed range, in place.

    Beyond a hypothesis' own window the parent prefix contributes nothing, so only the
    self-loops remain: stay on the last label, or move to / stay on blank.
    ``lp`` is ``(R, W, V)``. Returns the number of (row, frame) cells computed.
    """
    rows = np.arange(gamma_n.shape[0])
    lab = np.where(last >= 0, last, 0)
    no_label = last < 0
    start, stop = int(hi.min()) + 1, int(target.max())
    uniform = bool((hi == hi[0]).all() and (target == target[0]).all())
    for t in range(start, stop + 1):
        prev_n, prev_b = gamma_n[:, t - 1], gamma_b[:, t - 1]
        nn = np.where(no_label, NEG_INF, prev_n + lp[rows, t, lab])
        nb = np.logaddexp(prev_b, prev_n) + lp[:, t, -1]
        if not uniform:
            act = (hi < t) & (t <= target)
            nn = np.where(act, nn, gamma_n[:, t])
            nb = np.where(act, nb, gamma_b[:, t])
        gamma_n[:, t] = nn
        gamma_b[:, t] = nb
    return int(np.maximum(target - hi, 0).sum())


def expand_rows(gamma_n: np.ndarray, gamma_b: np.ndarray, last: np.ndarray, lp: np.ndarray,
                s: np.ndarray, e: np.ndarray, n_tokens: int):
    """Score every one-token extension of every row within its frame window.

    For each row and token ``c`` (frames ``t`` in ``[s, e]``)::

        phi_t     = gamma_b[t-1] (+) (gamma_n[t-1] if last != c else log 0)
        new_n[t]  = (new_n[t-1] (+) phi_t) + log p_t(c)
        new_b[t]  = (new_b[t-1] (+) new_n[t-1]) + log p_t(blank)
        psi       = (+)_t phi_t + log p_t(c)

    Parent arrays must be valid up to ``e - 1``. Returns ``psi (R, C)`` and the child
    forward arrays ``(R, W, C)``; child frames outside the window hold NEG_INF.
    """
    n_rows, width = gamma_n.shape
    tok = np.arange(n_tokens)
    same = last[:, None] == tok[None, :]
    new_n = np.full((n_rows, width, n_tokens), NEG_INF)
    new_b = np.full((n_rows, width, n_tokens), NEG_INF)
    psi = np.full((n_rows, n_tokens), NEG_INF)
    prev_n = np.full((n_rows, n_tokens), NEG_INF)
    prev_b = np.full((n_rows, n_tokens), NEG_INF)
    t0, t1 = int(s.min()), int(e.max())
    uniform = bool((s == t0).all() and (e == t1).all())
    for t in range(t0, t1 + 1):
        phi = np.logaddexp(gamma_b[:, t - 1, None],
                           np.where(same, NEG_INF, gamma_n[:, t - 1, None]))
        x = lp[:, t, :n_tokens]
        emit = phi + x
        nn = np.logaddexp(prev_n, phi) + x
        nb = np.logaddexp(prev_b, prev_n) + lp[:, t, n_tokens, None]
        if not uniform:
            act = ((s <= t) & (t <= e))[:, None]
            emit = np.where(act, emit, NEG_INF)
            nn = np.where(act, nn, NEG_INF)
            nb = np.where(act, nb, NEG_INF)
        psi = np.logaddexp(psi, emit)
        new_n[:, t] = nn
        new_b[:, t] = nb
        prev_n, prev_b = nn, nb
    return np.maximum(psi, NEG_INF), new_n, new_b


def argmax_frame(values: np.ndarray, lo: int, hi: int, fallback: int) -> int:
    """First frame in ``[lo, hi]`` maximizing ``values``; ``fallback`` if the range is empty."""
    if lo > hi:
        return fallback
    return lo + int(np.argmax(values[lo:hi + 1]))


def child_state(parent: CtcForwardState, token: int, gamma_n: np.ndarray, gamma_b: np.ndarray,
                s: int, e: int) -> CtcForwardState:
    """Wrap child forward arrays and estimate the new label's time indices.

    The estimates search from the parent's label time onward, limited to frames the
    child was computed on.
    """
    lo = max(parent.tau, s)
    tau = argmax_frame(gamma_n, lo, e, parent.tau)
    tau_tilde = argmax_frame(gamma_b, lo, e, parent.tau)
    return CtcForwardState(_frozen(gamma_n), _frozen(gamma_b), lo=s, hi=e, tau=tau,
                           tau_tilde=tau_tilde, prefix_len=parent.prefix_len + 1, last=token)


def extend_state(state: CtcForwardState, grid_or_lp, target: int) -> CtcForwardState:
    """Return ``state`` with forward variables valid through frame ``target``."""
    if state.hi >= target:
        return state
    lp = grid_or_lp.log_probs() if isinstance(grid_or_lp, PosteriorGrid) else grid_or_lp
    gn = state.gamma_n.copy()[None]
    gb = state.gamma_b.copy()[None]
    extend_rows(gn, gb, np.array([state.last]), lp[None], np.array([state.hi]),
                np.array([target]))
    return CtcForwardState(_frozen(gn[0]), _frozen(gb[0]), state.lo, target, state.tau,
                           state.tau_tilde, state.prefix_len, state.last)


def prefix_scores(state: CtcForwardState, grid: PosteriorGrid, window: Window):
    """Prefix scores and child states for every token extension of ``state``."""
    n_tokens = grid.vocab - 1
    if window.e > grid.num_frames:
        raise ValueError(f"window {window} exceeds grid length {grid.num_frames}")
    lp = grid.log_probs()
    state = extend_state(state, lp, window.e - 1)
    psi, gn, gb = expand_rows(state.gamma_n[None], state.gamma_b[None], np.array([state.last]),
                              lp[None], np.array([window.s]), np.array([window.e]), n_tokens)
    children = [child_state(state, c, gn[0, :, c].copy(), gb[0, :, c].copy(), window.s, window.e)
                for c in range(n_tokens)]
    return psi[0], children


def prefix_score_step(state: CtcForwardState, last_label: Optional[int], c: int,
                      grid: PosteriorGrid, window: Optional[Window] = None):
    """Log prefix probability of ``prefix + [c]`` restricted to ``window``, and the child state.

    ``last_label`` is the final token of the current prefix (None for the empty prefix).
    Without a window the full frame range is used.
    """
    n_tokens = grid.vocab - 1
    if not 0 <= c < n_tokens:
        raise NotACtcLabel(f"token {c} is not a CTC label (blank/eos id is {n_tokens})")
    if window is None:
        window = window_for(state.tau, state.tau_tilde, math.inf, math.inf,
                            state.prefix_len + 1, grid.num_frames)
    last = -1 if last_label is None else int(last_label)
    if last != state.last:
        state = CtcForwardState(state.gamma_n, state.gamma_b, state.lo, state.hi, state.tau,
                                state.tau_tilde, state.prefix_len, last)
    psi, children = prefix_scores(state, grid, window)
    return float(psi[c]), children[c]


def eos_score(state: CtcForwardState, grid: Optional[PosteriorGrid] = None) -> float:
    """Log probability that the grid emits exactly this prefix."""
    t = state.num_frames
    if grid is not None and grid.num_frames != t:
        raise ValueError(f"state has {t} frames, grid has {grid.num_frames}")
    if state.hi < t:
        raise ValueError(f"state covers frames up to {state.hi}, not the final frame {t}")
    return float(max(np.logaddexp(state.gamma_n[t], state.gamma_b[t]), NEG_INF))


def score_sequence(tokens: Sequence[int], grid: PosteriorGrid) -> tuple:
    """Unrestricted prefix score and exact score of ``tokens`` by chaining the recursion."""
    state = init_state(grid)
    psi = 0.0
    last = None
    for c in tokens:
        psi, state = prefix_score_step(state, last, c, grid)
        last = c
    return psi, eos_score(state)
