"""Token error rate evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


class UndefinedRate(ValueError):
    pass


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs, two rows of memory."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer(reference: Sequence, hypothesis: Sequence) -> tuple:
    """``(distance, distance / len(reference))``; tokens are compared as opaque values."""
    dist = edit_distance(reference, hypothesis)
    if not reference:
        if hypothesis:
            raise UndefinedRate("undefined rate: empty reference with a non-empty hypothesis")
        return 0, 0.0
    return dist, dist / len(reference)


@dataclass
class EvalReport:
    distances: dict = field(default_factory=dict)
    ref_lengths: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)

    def add(self, utt_id: str, reference: Sequence, hypothesis: Sequence) -> None:
        self.distances[utt_id] = edit_distance(reference, hypothesis)
        self.ref_lengths[utt_id] = len(reference)

    @property
    def total_distance(self) -> int:
        return sum(self.distances.values())

    @property
    def total_ref(self) -> int:
        return sum(self.ref_lengths.values())

    @property
    def cer(self) -> float:
        if self.total_ref == 0:
            if self.total_distance:
                raise UndefinedRate("undefined rate: references are empty")
            return 0.0
        return self.total_distance / self.total_ref

    def to_json(self) -> dict:
        return {"utterances": len(self.distances), "distance": self.total_distance,
                "ref_tokens": self.total_ref, "cer": self.cer, "missing": list(self.missing)}


def evaluate(references: dict, hypotheses: dict) -> EvalReport:
    """Score every referenced utterance; ids without a hypothesis count as empty output."""
    report = EvalReport()
    for uid, ref in references.items():
        if uid not in hypotheses:
            report.missing.append(uid)
        report.add(uid, ref, hypotheses.get(uid, ()))
    return report
