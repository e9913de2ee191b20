"""Attention-decoder stand-ins.

A scorer maps ``(utterance_id, prefix)`` to a log-probability vector over the ``|C|`` real
tokens followed by eos. The decoder only ever extends a prefix by one token per step, so
implementations may cache per-prefix state; cached values must equal fresh ones.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NORM_TOL = 1e-6


class ScorerError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def check_normalized(vec: np.ndarray, n_tokens: int, tol: float = NORM_TOL) -> None:
    if vec.shape != (n_tokens + 1,):
        raise ScorerError(f"scorer returned shape {vec.shape}, expected ({n_tokens + 1},)")
    m = float(np.max(vec))
    lse = m + math.log(float(np.exp(vec - m).sum()))
    if abs(lse) > tol:
        raise ScorerError(f"scorer vector is not normalized (logsumexp={lse:+.3g})")


class Scorer:
    """Base class; subclasses implement :meth:`score`."""

    n_tokens: int

    def score(self, utt_id: str, prefix: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, queries: Iterable[tuple]) -> np.ndarray:
        """Answer a group of ``(utt_id, prefix)`` queries at once, one row per query."""
        rows = [self.score(uid, prefix) for uid, prefix in queries]
        if not rows:
            return np.zeros((0, self.n_tokens + 1))
        return np.stack(rows)


class UniformScorer(Scorer):
    def __init__(self, n_tokens: int):
        self.n_tokens = n_tokens
        self._vec = _frozen(np.full(n_tokens + 1, -math.log(n_tokens + 1)))

    def score(self, utt_id, prefix):
        return self._vec

    def score_batch(self, queries):
        queries = list(queries)
        return np.broadcast_to(self._vec, (len(queries), self.n_tokens + 1)).copy()

    def __repr__(self):
        return f"UniformScorer(n_tokens={self.n_tokens})"


class TableScorer(Scorer):
    """n-gram lookup over the last ``order - 1`` tokens; unseen contexts fall back to uniform.

    Prefixes shorter than the context length are looked up as-is, so a bigram table may
    carry an entry for the empty context.
    """

    def __init__(self, order: int, table: dict, n_tokens: int):
        if order < 1:
            raise ScorerError(f"n-gram order must be >= 1, got {order}")
        self.order = order
        self.n_tokens = n_tokens
        self.table = {}
        for ctx, vec in table.items():
            ctx = tuple(int(c) for c in ctx)
            if len(ctx) > order - 1:
                raise ScorerError(f"context {ctx} is longer than order-1={order - 1}")
            if any(not 0 <= c < n_tokens for c in ctx):
                raise ScorerError(f"context {ctx} uses a token outside 0..{n_tokens - 1}")
            vec = _frozen(vec)
            check_normalized(vec, n_tokens)
            self.table[ctx] = vec
        self._uniform = UniformScorer(n_tokens)._vec

    def score(self, utt_id, prefix):
        k = self.order - 1
        ctx = tuple(prefix[-k:]) if k else ()
        return self.table.get(ctx, self._uniform)

    @classmethod
    def from_json(cls, obj: dict) -> "TableScorer":
        try:
            order = int(obj["order"])
            entries = obj["entries"]
            table = {tuple(e["ctx"]): e["logp"] for e in entries}
        except (KeyError, TypeError) as exc:
            raise ScorerError(f"malformed table scorer: {exc!r}") from None
        widths = {len(v) for v in table.values()}
        if len(widths) != 1:
            raise ScorerError(f"table vectors have inconsistent lengths {sorted(widths)}")
        return cls(order, table, widths.pop() - 1)

    @classmethod
    def load(cls, path) -> "TableScorer":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScorerError(f"{path}: {exc}") from None
        return cls.from_json(obj)

    def to_json(self) -> dict:
        entries = [{"ctx": list(ctx), "logp": [float(x) for x in vec]}
                   for ctx, vec in sorted(self.table.items())]
        return {"order": self.order, "entries": entries}

    @classmethod
    def random(cls, n_tokens: int, order: int = 2, seed: int = 0,
               concentration: float = 1.0) -> "TableScorer":
        """Dirichlet-sampled vectors for every context of length ``0..order-1``."""
        rng = np.random.default_rng(seed)
        table = {}
        for k in range(order):
            for ctx in np.ndindex(*(n_tokens,) * k):
                p = rng.dirichlet(np.full(n_tokens + 1, concentration))
                p = np.maximum(p, 1e-12)
                logp = np.log(p)
                table[tuple(int(c) for c in ctx)] = logp - np.logaddexp.reduce(logp)
        return cls(order, table, n_tokens)

    def __repr__(self):
        return f"TableScorer(order={self.order}, n_tokens={self.n_tokens}, entries={len(self.table)})"


class LoopScorer(Scorer):
    """Puts ``p_loop`` on one token and spreads the rest evenly, eos included.

    Greedy decoding with this scorer repeats ``loop_token`` forever; it drives the
    repetition pathology that CTC-based end detection is meant to catch.
    """

    def __init__(self, loop_token: int, p_loop: float, n_tokens: int):
        if not 0.5 < p_loop < 1.0:
            raise ScorerError(f"p_loop must lie in (0.5, 1), got {p_loop}")
        if not 0 <= loop_token < n_tokens:
            raise ScorerError(f"loop token {loop_token} outside 0..{n_tokens - 1}")
        self.loop_token = loop_token
        self.p_loop = p_loop
        self.n_tokens = n_tokens
        vec = np.full(n_tokens + 1, math.log((1.0 - p_loop) / n_tokens))
        vec[loop_token] = math.log(p_loop)
        self._vec = _frozen(vec)

    def score(self, utt_id, prefix):
        return self._vec

    def __repr__(self):
        return f"LoopScorer(loop_token={self.loop_token}, p_loop={self.p_loop})"


def uniform_score(n_tokens: int, utt_id: str = "", prefix: Sequence[int] = ()) -> np.ndarray:
    return UniformScorer(n_tokens).score(utt_id, prefix)


def table_score(scorer: TableScorer, utt_id: str, prefix: Sequence[int]) -> np.ndarray:
    return scorer.score(utt_id, prefix)


def loop_score(scorer: LoopScorer, utt_id: str, prefix: Sequence[int]) -> np.ndarray:
    return scorer.score(utt_id, prefix)


def parse_scorer(spec: str, n_tokens: int) -> Scorer:
    """Build a scorer from ``uniform``, ``table:PATH`` or ``loop:TOKEN:P``."""
    kind, _, rest = spec.partition(":")
    if kind == "uniform" and not rest:
        return UniformScorer(n_tokens)
    if kind == "table" and rest:
        scorer = TableScorer.load(rest)
        if scorer.n_tokens != n_tokens:
            raise ScorerError(f"table scorer covers {scorer.n_tokens} tokens, grids have {n_tokens}")
        return scorer
    if kind == "loop" and rest:
        token, _, p = rest.partition(":")
        try:
            return LoopScorer(int(token), float(p), n_tokens)
        except ValueError as exc:
            raise ScorerError(f"bad loop scorer spec {spec!r}: {exc}") from None
    raise ScorerError(f"unknown scorer spec {spec!r}; expected uniform, table:PATH or loop:TOKEN:P")
