"""Splitting long inputs: VAD log-likelihood-ratio segmentation and uniform hard cuts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# default lengths in seconds for each mode, as (min, max)
VAD_DEFAULT_S = (15.0, 20.0)
HARD_DEFAULT_S = (19.0, 20.0)


@dataclass(frozen=True)
class NodeMap:
    """Which VAD output nodes stand for speech states and which for noise states."""

    speech: tuple
    noise: tuple

    def __post_init__(self):
        object.__setattr__(self, "speech", tuple(int(k) for k in self.speech))
        object.__setattr__(self, "noise", tuple(int(k) for k in self.noise))
        if not self.speech or not self.noise:
            raise ValueError("node map needs at least one speech node and one noise node")
        if set(self.speech) & set(self.noise):
            raise ValueError(f"nodes {sorted(set(self.speech) & set(self.noise))} are both "
                             f"speech and noise")
        if min(self.speech + self.noise) < 0:
            raise ValueError("node indices must be non-negative")

    def check_width(self, width: int) -> None:
        top = max(self.speech + self.noise)
        if top >= width:
            raise IndexError(f"node {top} is out of range for {width} output nodes")

    @classmethod
    def from_json(cls, obj: dict) -> "NodeMap":
        try:
            return cls(obj["speech"], obj["noise"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed node map: {exc!r}") from None

    @classmethod
    def load(cls, path) -> "NodeMap":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> dict:
        return {"speech": list(self.speech), "noise": list(self.noise)}


@dataclass(frozen=True)
class VadConfig:
    threshold: float = 0.0
    smooth_window: int = 5
    min_len: int = 375
    max_len: int = 500

    def __post_init__(self):
        if self.smooth_window < 1:
            raise ValueError(f"smoothing window must be >= 1 frame, got {self.smooth_window}")
        if not 0 < self.min_len <= self.max_len:
            raise ValueError(f"need 0 < min_len <= max_len, got {self.min_len}, {self.max_len}")


@dataclass(frozen=True)
class Segment:
    utterance_id: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start

    def to_json(self, source: str) -> dict:
        return {"id": self.utterance_id, "start_frame": self.start, "end_frame": self.end,
                "source": source}


def seconds_to_frames(seconds: float, frame_shift_ms: int) -> int:
    return max(1, int(round(seconds * 1000.0 / frame_shift_ms)))


def frame_llr(outputs: np.ndarray, nodemap: NodeMap) -> np.ndarray:
    """Noise-over-speech log-likelihood ratio, one value per frame (or a scalar for one frame)."""
    out = np.asarray(outputs, dtype=np.float64)
    nodemap.check_width(out.shape[-1])
    return out[..., list(nodemap.noise)].max(axis=-1) - out[..., list(nodemap.speech)].max(axis=-1)


def smooth_and_decide(llr: np.ndarray, threshold: float = 0.0, window: int = 1) -> np.ndarray:
    """Speech flags: the centered ``window``-frame mean of the LLR is at most ``threshold``.

    Windows are truncated at the edges, so border frames average over fewer values.
    """
    if window < 1:
        raise ValueError(f"smoothing window must be >= 1 frame, got {window}")
    llr = np.asarray(llr, dtype=np.float64)
    n = len(llr)
    if n == 0:
        return np.zeros(0, dtype=bool)
    half_lo = (window - 1) // 2
    half_hi = window // 2
    csum = np.concatenate([[0.0], np.cumsum(llr)])
    t = np.arange(n)
    lo = np.maximum(t - half_lo, 0)
    hi = np.minimum(t + half_hi + 1, n)
    means = (csum[hi] - csum[lo]) / (hi - lo)
    return means <= threshold


def speech_runs(flags: Sequence[bool]) -> list:
    """Maximal ``[start, end)`` runs of True."""
    flags = np.asarray(flags, dtype=bool)
    edges = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def split_uniform(start: int, end: int, max_len: int) -> list:
    """Cut ``[start, end)`` into ``ceil(L / max_len)`` pieces whose lengths differ by at most one."""
    length = end - start
    n = max(1, math.ceil(length / max_len))
    base, extra = divmod(length, n)
    out = []
    pos = start
    for i in range(n):
        size = base + (1 if i < extra else 0)
        out.append((pos, pos + size))
        pos += size
    return out


def vad_segments(flags: Sequence[bool], min_len: int, max_len: int,
                 utterance_id: str = "utt") -> list:
    """Merge short speech runs left to right across their gaps, then split overlong ones."""
    if not 0 < min_len <= max_len:
        raise ValueError(f"need 0 < min_len <= max_len, got {min_len}, {max_len}")
    merged = []
    for start, end in speech_runs(flags):
        if merged and merged[-1][1] - merged[-1][0] < min_len:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    out = []
    for start, end in merged:
        out.extend(Segment(utterance_id, a, b) for a, b in split_uniform(start, end, max_len))
    return out


def hard_segments(num_frames: int, min_len: int, max_len: int, utterance_id: str = "utt") -> list:
    """Near-equal consecutive pieces, none longer than ``max_len``.

    When ``max_len`` and ``min_len`` cannot both hold, ``max_len`` wins.
    """
    if num_frames < 1:
        raise ValueError(f"cannot segment {num_frames} frames")
    if not 0 < min_len <= max_len:
        raise ValueError(f"need 0 < min_len <= max_len, got {min_len}, {max_len}")
    if num_frames < min_len:
        return [Segment(utterance_id, 0, num_frames)]
    return [Segment(utterance_id, a, b) for a, b in split_uniform(0, num_frames, max_len)]


def segment_vad_outputs(outputs: np.ndarray, nodemap: NodeMap, cfg: VadConfig,
                        utterance_id: str = "utt") -> list:
    flags = smooth_and_decide(frame_llr(outputs, nodemap), cfg.threshold, cfg.smooth_window)
    return vad_segments(flags, cfg.min_len, cfg.max_len, utterance_id)


def segment_stats(segments: Sequence[Segment], frame_shift_ms: int = 10) -> str:
    """One summary line of segment count and length mean/std in seconds."""
    if not segments:
        return "segments=0 mean=0.00 std=0.00"
    lengths = np.array([len(s) for s in segments], dtype=np.float64) * frame_shift_ms / 1000.0
    return f"segments={len(segments)} mean={lengths.mean():.2f} std={lengths.std():.2f}"
