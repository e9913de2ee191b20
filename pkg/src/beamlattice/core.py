"""Shared domain types for the decoder: token sets, posterior grids, configs, results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

# Finite stand-in for log(0). Sums involving it stay far below any real score.
NEG_INF = -1e30

EOS_MODES = ("baseline", "ctc", "both")
EOS_TRIGGERS = ("baseline", "ctc", "max_len")


@dataclass(frozen=True)
class TokenSet:
    """Real tokens ``0..size_c-1``; index ``size_c`` is blank for CTC and eos for attention."""

    size_c: int
    names: Optional[tuple] = None

    def __post_init__(self):
        if self.size_c < 1:
            raise ValueError(f"token set needs at least one token, got size_c={self.size_c}")
        if self.names is not None and len(self.names) != self.size_c:
            raise ValueError(f"expected {self.size_c} token names, got {len(self.names)}")

    @property
    def blank_id(self) -> int:
        return self.size_c

    @property
    def eos_id(self) -> int:
        return self.size_c

    @property
    def vocab(self) -> int:
        return self.size_c + 1

    def text(self, tokens: Sequence[int]) -> Optional[str]:
        if self.names is None:
            return None
        return "".join(self.names[t] for t in tokens)


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """Per-frame natural-log CTC posteriors, shape ``(T, |C|+1)`` with blank last.

    Values are held as float32, the on-disk precision, so a store/load cycle is lossless.
    """

    logp: np.ndarray
    frame_shift_ms: int = 40

    def __post_init__(self):
        arr = np.array(self.logp, dtype=np.float32, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"grid must be 2-D (frames x vocab), got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "logp", arr)

    @property
    def num_frames(self) -> int:
        return self.logp.shape[0]

    @property
    def vocab(self) -> int:
        return self.logp.shape[1]

    @property
    def token_set(self) -> TokenSet:
        return TokenSet(self.vocab - 1)

    @property
    def duration_s(self) -> float:
        return self.num_frames * self.frame_shift_ms / 1000.0

    def log_probs(self) -> np.ndarray:
        return self._prepared

    @cached_property
    def _prepared(self) -> np.ndarray:
        """float64 rows renormalized to sum to one, with an all-blank virtual frame 0 prepended.

        Row ``t`` is frame ``t`` in the 1-based frame numbering used by the recursions.
        Renormalizing removes the float32 storage error so prefix masses partition exactly.
        """
        out = np.full((self.num_frames + 1, self.vocab), NEG_INF)
        out[0, -1] = 0.0
        if self.num_frames:
            rows = np.maximum(self.logp.astype(np.float64), NEG_INF)
            out[1:] = np.maximum(rows - _logsumexp_rows(rows)[:, None], NEG_INF)
        out.flags.writeable = False
        return out

    def __eq__(self, other):
        if not isinstance(other, PosteriorGrid):
            return NotImplemented
        return (self.frame_shift_ms == other.frame_shift_ms
                and self.logp.shape == other.logp.shape
                and self.logp.tobytes() == other.logp.tobytes())

    def __hash__(self):
        return hash((self.frame_shift_ms, self.logp.shape, self.logp.tobytes()))

    @classmethod
    def from_probs(cls, probs, frame_shift_ms: int = 40) -> "PosteriorGrid":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logp = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), NEG_INF)
        return cls(logp, frame_shift_ms)


@dataclass(frozen=True)
class Utterance:
    id: str
    grid: PosteriorGrid
    true_frames: int = -1

    def __post_init__(self):
        if self.true_frames < 0:
            object.__setattr__(self, "true_frames", self.grid.num_frames)
        if self.true_frames > self.grid.num_frames:
            raise ValueError(f"{self.id}: true_frames={self.true_frames} exceeds grid length "
                             f"{self.grid.num_frames}")


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 3
    ctc_weight: float = 0.3
    eos_m: int = 3
    eos_threshold: float = -10.0
    eos_c: int = 2
    margin_m1: float = 5
    margin_m2: float = math.inf
    eos_mode: str = "both"
    max_steps_ratio: float = 1.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight must lie in [0, 1], got {self.ctc_weight}")
        if self.eos_m < 1:
            raise ValueError(f"eos_m must be >= 1, got {self.eos_m}")
        if self.eos_c < 0:
            raise ValueError(f"eos_c must be >= 0, got {self.eos_c}")
        if self.margin_m1 < 0 or self.margin_m2 < 0:
            raise ValueError("CTC window margins must be non-negative")
        if self.eos_mode not in EOS_MODES:
            raise ValueError(f"eos_mode must be one of {EOS_MODES}, got {self.eos_mode!r}")
        if not 0.0 < self.max_steps_ratio <= 1.0:
            raise ValueError(f"max_steps_ratio must lie in (0, 1], got {self.max_steps_ratio}")

    @property
    def restricted(self) -> bool:
        return not (math.isinf(self.margin_m1) and math.isinf(self.margin_m2))

    def max_steps(self, num_frames: int) -> int:
        return max(1, math.ceil(self.max_steps_ratio * num_frames - 1e-9))


@dataclass
class DecodeResult:
    id: str
    tokens: list
    joint_logp: float
    label_times: list
    steps_taken: int
    eos_trigger: str
    text: Optional[str] = None
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def to_json(self) -> dict:
        out = {"id": self.id, "tokens": [int(t) for t in self.tokens]}
        if self.text is not None:
            out["text"] = self.text
        out.update(joint_logp=float(self.joint_logp),
                   label_times=[int(t) for t in self.label_times],
                   steps=int(self.steps_taken), eos_trigger=self.eos_trigger)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DecodeResult":
        return cls(id=obj["id"], tokens=list(obj["tokens"]), joint_logp=float(obj["joint_logp"]),
                   label_times=list(obj["label_times"]), steps_taken=int(obj["steps"]),
                   eos_trigger=obj["eos_trigger"], text=obj.get("text"))


def _logsumexp_rows(logp: np.ndarray) -> np.ndarray:
    m = logp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logp - m).sum(axis=1, keepdims=True)))[:, 0]


def validate_grid(grid: PosteriorGrid, tol: float = 1e-6) -> Optional[str]:
    """Return a description of the first violated grid invariant, or None when the grid is valid."""
    if grid.num_frames == 0:
        return "empty grid"
    if grid.vocab < 2:
        return f"vocab={grid.vocab} leaves no room for a token besides blank"
    logp = grid.logp.astype(np.float64)
    bad = ~np.isfinite(logp)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        return f"row {r} entry {c} is not finite"
    over = logp > tol
    if over.any():
        r, c = np.argwhere(over)[0]
        return f"row {r} entry {c}={logp[r, c]:+.3g} is not a log-probability"
    lse = _logsumexp_rows(logp)
    off = np.abs(lse) > tol
    if off.any():
        r = int(np.argmax(off))
        return f"row {r} logsumexp={lse[r]:+.3f}"
    return None


def pad_to_length(grid: PosteriorGrid, target_frames: int) -> PosteriorGrid:
    """Append blank-certain frames until the grid has ``target_frames`` rows."""
    if target_frames < grid.num_frames:
        raise ValueError(f"cannot pad a {grid.num_frames}-frame grid down to {target_frames}")
    if target_frames == grid.num_frames:
        return grid
    pad = np.full((target_frames - grid.num_frames, grid.vocab), NEG_INF, dtype=np.float32)
    pad[:, -1] = 0.0
    return PosteriorGrid(np.concatenate([grid.logp, pad]), grid.frame_shift_ms)
