"""Multi-utterance batched decoding with length-sorted batch packing.

Every live hypothesis of every utterance in a batch is scored in one CTC kernel call
and one scorer batch per step. Each utterance keeps its own true length, step bound and
end detection, so batched results equal sequential ones exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DecoderConfig, Utterance
from .scorers import Scorer
from .search import TraceFn, UttSearch, run_searches, topb


@dataclass
class Batch:
    """Utterances decoded together; ``order`` maps batch slots back to input positions."""

    utterances: list
    order: list = field(default_factory=list)

    def __post_init__(self):
        if not self.utterances:
            raise ValueError("a batch needs at least one utterance")
        if not self.order:
            self.order = list(range(len(self.utterances)))
        if len(self.order) != len(self.utterances):
            raise ValueError("order must have one entry per utterance")

    def __len__(self):
        return len(self.utterances)

    @property
    def padded_T(self) -> int:
        return max(u.true_frames for u in self.utterances)

    @property
    def ids(self) -> list:
        return [u.id for u in self.utterances]


def make_batches(utterances: Sequence[Utterance], batch_size: int) -> list:
    """Sort by true length (stable) and cut into consecutive runs of ``batch_size``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    idx = sorted(range(len(utterances)), key=lambda i: utterances[i].true_frames)
    return [Batch([utterances[i] for i in idx[k:k + batch_size]], idx[k:k + batch_size])
            for k in range(0, len(idx), batch_size)]


def topb_per_utterance(scores: np.ndarray, beam_width: int) -> np.ndarray:
    """Top-``beam_width`` flat ``j * |C| + c`` indices for each utterance of a U x B x |C| array."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ValueError(f"expected a U x B x C array, got shape {scores.shape}")
    flat = scores.reshape(scores.shape[0], -1)
    return np.stack([topb(row, beam_width) for row in flat])


def batched_beam_search(batch: Batch, scorer: Scorer, cfg: Optional[DecoderConfig] = None,
                        trace: Optional[TraceFn] = None) -> list:
    """Decode every utterance of ``batch``; results follow the batch's utterance order."""
    cfg = cfg or DecoderConfig()
    searches = []
    for utt in batch.utterances:
        if utt.true_frames == 0:
            raise ValueError(f"{utt.id}: cannot decode an empty grid")
        searches.append(UttSearch(utt, cfg))
    try:
        return run_searches(searches, scorer, trace)
    except Exception as exc:
        live = [s.utt.id for s in searches if not s.done]
        if any(uid in str(exc) for uid in live):
            raise
        try:
            wrapped = type(exc)(f"while decoding {', '.join(live)}: {exc}")
        except Exception:
            raise exc from None
        raise wrapped from exc


def decode_all(utterances: Sequence[Utterance], scorer: Scorer,
               cfg: Optional[DecoderConfig] = None, batch_size: int = 16) -> list:
    """Decode in length-sorted batches; results come back in input order."""
    out: list = [None] * len(utterances)
    for batch in make_batches(utterances, batch_size):
        for pos, res in zip(batch.order, batched_beam_search(batch, scorer, cfg)):
            out[pos] = res
    return out

