"""Label-synchronous joint CTC/attention beam search with end-of-speech detection.

The search state of one utterance lives in :class:`UttSearch`. :func:`run_searches`
advances any number of them in lock step, stacking every live hypothesis of every
utterance into one CTC kernel call and one scorer batch per step. :func:`beam_search`
is the single-utterance case.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import NEG_INF, DecodeResult, DecoderConfig, PosteriorGrid, Utterance
from .ctc import (CtcForwardState, Window, batch_window, child_state, expand_rows, extend_rows,
                  init_state, window_for)
from .scorers import NORM_TOL, Scorer, ScorerError, check_normalized

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    att_logp: float
    ctc_logp: float
    joint: float
    fwd: CtcForwardState
    label_times: tuple = ()


@dataclass(frozen=True)
class FinishedEntry:
    tokens: tuple
    joint: float
    tau_last: int
    label_times: tuple = ()

    @property
    def length(self) -> int:
        # eos counts toward the length, so an entry finished at step l has length l
        return len(self.tokens) + 1


@dataclass
class FinishedSet:
    entries: list = field(default_factory=list)

    def add(self, entry: FinishedEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def best(self) -> Optional[FinishedEntry]:
        best = None
        for entry in self.entries:
            if best is None or entry.joint > best.joint:
                best = entry
        return best


def end_detect_baseline(finished, step: int, m: int = 3, d_end: float = -10.0) -> bool:
    """True when none of the last ``m`` lengths produced an entry within ``d_end`` of the best.

    A length with no finished entry at all does not count as satisfied.
    """
    entries = list(finished)
    if not entries:
        return False
    overall = max(e.joint for e in entries)
    for k in range(m):
        same = [e.joint for e in entries if e.length == step - k]
        if not same or not max(same) - overall < d_end:
            return False
    return True


def end_detect_ctc(finished, len_h: int, c: int = 2, step: Optional[int] = None, m: int = 3,
                   d_end: float = -10.0) -> bool:
    """Fire when more than ``c`` finished entries put their last label on the final frame.

    With ``step`` given, the baseline rule is checked first and short-circuits.
    """
    if step is not None and end_detect_baseline(finished, step, m, d_end):
        return True
    count = 0
    for entry in finished:
        if entry.tau_last == len_h:
            count += 1
        if count > c:
            return True
    return False


def end_detect(finished, step: int, len_h: int, cfg: DecoderConfig) -> Optional[str]:
    """Return which detector fired at ``step`` (``"baseline"`` / ``"ctc"``), or None."""
    if cfg.eos_mode in ("baseline", "both"):
        if end_detect_baseline(finished, step, cfg.eos_m, cfg.eos_threshold):
            return "baseline"
    if cfg.eos_mode in ("ctc", "both"):
        if end_detect_ctc(finished, len_h, cfg.eos_c):
            return "ctc"
    return None


def topb(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries of a flat array; ties go to the lower index."""
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def root_hypothesis(grid: PosteriorGrid) -> Hypothesis:
    return Hypothesis(tokens=(), att_logp=0.0, ctc_logp=0.0, joint=0.0, fwd=init_state(grid))


def _hyp_window(hyp: Hypothesis, step: int, cfg: DecoderConfig, num_frames: int) -> Window:
    return window_for(hyp.fwd.tau, hyp.fwd.tau_tilde, cfg.margin_m1, cfg.margin_m2, step,
                      num_frames)


def _combine(ctc: np.ndarray, att_prefix, att: np.ndarray, weight: float) -> np.ndarray:
    return weight * ctc + (1.0 - weight) * (att_prefix + att)


def joint_step_scores(hyp: Hypothesis, grid: PosteriorGrid, scorer: Scorer, cfg: DecoderConfig,
                      utt_id: str = "", step: Optional[int] = None):
    """Joint scores of every one-token extension of ``hyp`` plus its eos score.

    Returns ``(joint[C], eos_joint, [(psi, state) per token])``; the CTC window comes
    from the hypothesis' own time estimates.
    """
    step = len(hyp.tokens) + 1 if step is None else step
    n_tokens = grid.vocab - 1
    t = grid.num_frames
    lp = grid.log_probs()
    window = _hyp_window(hyp, step, cfg, t)
    att = np.asarray(scorer.score(utt_id, hyp.tokens), dtype=np.float64)
    check_normalized(att, n_tokens)
    gn, gb = hyp.fwd.gamma_n.copy()[None], hyp.fwd.gamma_b.copy()[None]
    last = np.array([hyp.fwd.last])
    extend_rows(gn, gb, last, lp[None], np.array([hyp.fwd.hi]), np.array([t]))
    psi, new_n, new_b = expand_rows(gn, gb, last, lp[None], np.array([window.s]),
                                    np.array([window.e]), n_tokens)
    parent = CtcForwardState(gn[0], gb[0], hyp.fwd.lo, t, hyp.fwd.tau, hyp.fwd.tau_tilde,
                             hyp.fwd.prefix_len, hyp.fwd.last)
    eos_ctc = max(float(np.logaddexp(gn[0, t], gb[0, t])), NEG_INF)
    joint = _combine(psi[0], hyp.att_logp, att[:n_tokens], cfg.ctc_weight)
    eos_joint = float(_combine(eos_ctc, hyp.att_logp, att[n_tokens], cfg.ctc_weight))
    per_token = [(float(psi[0, c]),
                  child_state(parent, c, new_n[0, :, c].copy(), new_b[0, :, c].copy(), window.s,
                              window.e))
                 for c in range(n_tokens)]
    return joint, eos_joint, per_token


def _finish_bar(flat: np.ndarray, keep: np.ndarray, beam_width: int) -> float:
    """Score an eos candidate must beat to be recorded as finished.

    That is the weakest token expansion surviving into the next beam; when every
    expansion survives, eos is always recorded. With a beam of one this reduces to
    comparing eos against the best token.
    """
    return float(flat[keep[-1]]) if len(flat) > beam_width else -math.inf


class UttSearch:
    """Beam, finished set and termination state of one utterance."""

    def __init__(self, utt: Utterance, cfg: DecoderConfig):
        self.utt = utt
        self.cfg = cfg
        self.num_frames = utt.true_frames
        if self.num_frames < 1:
            raise ValueError(f"{utt.id}: cannot decode an empty grid")
        grid = utt.grid
        if grid.num_frames != self.num_frames:
            grid = PosteriorGrid(grid.logp[:self.num_frames], grid.frame_shift_ms)
        self.grid = grid
        self.lp = grid.log_probs()
        self.n_tokens = grid.vocab - 1
        self.max_steps = cfg.max_steps(self.num_frames)
        self.beam = [root_hypothesis(grid)]
        self.finished = FinishedSet()
        self.done = False
        self.trigger: Optional[str] = None
        self.steps = 0
        self.scorer_queries = 0
        self.ctc_frames = 0
        self.ctc_tail_frames = 0

    def window(self, step: int) -> Window:
        return batch_window([_hyp_window(h, step, self.cfg, self.num_frames) for h in self.beam])

    def absorb(self, step: int, psi, new_n, new_b, att, eos_ctc, window: Window, parents) -> None:
        """Select the next beam and update the finished set from this step's scores."""
        cfg = self.cfg
        c_count = self.n_tokens
        width = self.num_frames + 1
        att_prefix = np.array([h.att_logp for h in self.beam])
        joint = _combine(psi, att_prefix[:, None], att[:, :c_count], cfg.ctc_weight)
        eos_joint = _combine(eos_ctc, att_prefix, att[:, c_count], cfg.ctc_weight)

        flat = joint.reshape(-1)
        keep = topb(flat, cfg.beam_width)
        bar = _finish_bar(flat, keep, cfg.beam_width)
        for j, hyp in enumerate(self.beam):
            if eos_joint[j] > bar:
                self.finished.add(FinishedEntry(hyp.tokens, float(eos_joint[j]), hyp.fwd.tau,
                                                hyp.label_times))

        new_beam = []
        for idx in keep:
            j, c = divmod(int(idx), c_count)
            hyp = self.beam[j]
            state = child_state(parents[j], c, new_n[j, :width, c].copy(),
                                new_b[j, :width, c].copy(), window.s, window.e)
            att_logp = hyp.att_logp + att[j, c]
            new_beam.append(Hypothesis(tokens=hyp.tokens + (c,), att_logp=float(att_logp),
                                       ctc_logp=float(psi[j, c]), joint=float(joint[j, c]),
                                       fwd=state, label_times=hyp.label_times + (state.tau,)))
        self.beam = new_beam
        self.steps = step
        self.trigger = end_detect(self.finished, step, self.num_frames, cfg)
        if self.trigger is not None or step >= self.max_steps:
            self.done = True

    def result(self) -> DecodeResult:
        best = self.finished.best()
        if best is not None:
            tokens, joint, times = best.tokens, best.joint, best.label_times
        else:
            hyp = max(self.beam, key=lambda h: h.joint)
            tokens, joint, times = hyp.tokens, hyp.joint, hyp.label_times
        stats = {"scorer_queries": self.scorer_queries, "ctc_frames_evaluated": self.ctc_frames,
                 "ctc_tail_frames": self.ctc_tail_frames, "finished": len(self.finished)}
        return DecodeResult(id=self.utt.id, tokens=list(tokens), joint_logp=float(joint),
                            label_times=list(times), steps_taken=self.steps,
                            eos_trigger=self.trigger or "max_len", stats=stats)


def _pad_rows(arr: np.ndarray, width: int, fill: np.ndarray) -> np.ndarray:
    if arr.shape[0] == width:
        return arr
    return np.concatenate([arr, np.broadcast_to(fill, (width - arr.shape[0],) + fill.shape)])


def _check_scores(att: np.ndarray, n_tokens: int, searches, rows_of) -> None:
    if att.shape[1] != n_tokens + 1:
        raise ScorerError(f"scorer returned {att.shape[1]} entries, expected {n_tokens + 1}")
    m = att.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(att - m).sum(axis=1))
    bad = np.abs(lse) > NORM_TOL
    if bad.any():
        r = int(np.argmax(bad))
        raise ScorerError(f"{searches[rows_of[r]].utt.id}: scorer vector is not normalized "
                          f"(logsumexp={lse[r]:+.3g})")


def step_searches(searches: Sequence[UttSearch], step: int, scorer: Scorer) -> None:
    """Advance every search by one label: score all live hypotheses jointly, then select."""
    n_tokens = searches[0].n_tokens
    if any(s.n_tokens != n_tokens for s in searches):
        raise ValueError("all utterances in a batch must share one token set")
    width = max(s.num_frames for s in searches) + 1
    pad_lp = np.full(n_tokens + 1, NEG_INF)
    pad_lp[-1] = 0.0

    windows = [s.window(step) for s in searches]
    rows_of, gn, gb, last, hi, t_end, s_lo, s_hi, lps, queries = ([] for _ in range(10))
    for i, (search, win) in enumerate(zip(searches, windows)):
        lp = _pad_rows(search.lp, width, pad_lp)
        for hyp in search.beam:
            rows_of.append(i)
            gn.append(_pad_rows(hyp.fwd.gamma_n, width, np.float64(NEG_INF)))
            gb.append(_pad_rows(hyp.fwd.gamma_b, width, np.float64(NEG_INF)))
            last.append(hyp.fwd.last)
            hi.append(hyp.fwd.hi)
            t_end.append(search.num_frames)
            s_lo.append(win.s)
            s_hi.append(win.e)
            lps.append(lp)
            queries.append((search.utt.id, hyp.tokens))
    gn, gb = np.array(gn), np.array(gb)
    last, hi, t_end = np.array(last), np.array(hi), np.array(t_end)
    s_lo, s_hi = np.array(s_lo), np.array(s_hi)
    lps = np.stack(lps)

    # each live hypothesis is needed through the final frame for its eos score
    if (hi < t_end).any():
        extend_rows(gn, gb, last, lps, hi, t_end)
    rows = np.arange(len(rows_of))
    eos_ctc = np.maximum(np.logaddexp(gn[rows, t_end], gb[rows, t_end]), NEG_INF)
    psi, new_n, new_b = expand_rows(gn, gb, last, lps, s_lo, s_hi, n_tokens)

    att = np.asarray(scorer.score_batch(queries), dtype=np.float64)
    _check_scores(att, n_tokens, searches, rows_of)

    start = 0
    for i, (search, win) in enumerate(zip(searches, windows)):
        n = len(search.beam)
        sl = slice(start, start + n)
        start += n
        t = search.num_frames
        parents = [CtcForwardState(gn[r, :t + 1], gb[r, :t + 1], h.fwd.lo, t, h.fwd.tau,
                                   h.fwd.tau_tilde, h.fwd.prefix_len, h.fwd.last)
                   for r, h in zip(range(sl.start, sl.stop), search.beam)]
        search.scorer_queries += n
        search.ctc_frames += n * len(win)
        search.ctc_tail_frames += int(np.maximum(t_end[sl] - hi[sl], 0).sum())
        search.absorb(step, psi[sl], new_n[sl], new_b[sl], att[sl], eos_ctc[sl], win, parents)


TraceFn = Callable[[int, Sequence[UttSearch]], None]


def run_searches(searches: Sequence[UttSearch], scorer: Scorer,
                 trace: Optional[TraceFn] = None) -> list:
    """Step all searches until each is done; finished utterances are frozen."""
    step = 0
    while True:
        live = [s for s in searches if not s.done]
        if not live:
            break
        step += 1
        step_searches(live, step, scorer)
        if trace is not None:
            trace(step, searches)
    return [s.result() for s in searches]


def beam_search(utt, scorer: Scorer, cfg: Optional[DecoderConfig] = None,
                trace: Optional[TraceFn] = None) -> DecodeResult:
    """Decode one utterance (a :class:`Utterance` or a bare :class:`PosteriorGrid`)."""
    cfg = cfg or DecoderConfig()
    if isinstance(utt, PosteriorGrid):
        utt = Utterance("utt", utt)
    if utt.grid.num_frames == 0 or utt.true_frames == 0:
        raise ValueError(f"{utt.id}: cannot decode an empty grid")
    return run_searches([UttSearch(utt, cfg)], scorer, trace)[0]
