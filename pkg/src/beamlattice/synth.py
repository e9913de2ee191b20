"""Synthetic posterior grids and VAD outputs standing in for real model output."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import NEG_INF, PosteriorGrid

STYLES = ("random", "planted", "blank_heavy")


def _log_normalize(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))


def random_grid(rng: np.random.Generator, num_frames: int, n_tokens: int, scale: float = 2.0,
                frame_shift_ms: int = 40) -> PosteriorGrid:
    """Softmax of Gaussian logits; every sequence has non-zero mass."""
    logits = rng.normal(0.0, scale, size=(num_frames, n_tokens + 1))
    return PosteriorGrid(_log_normalize(logits), frame_shift_ms)


@dataclass(frozen=True)
class Planted:
    grid: PosteriorGrid
    tokens: tuple
    alignment: tuple


def plant_alignment(rng: np.random.Generator, num_frames: int, n_tokens: int, max_gap: int = 8,
                    max_run: int = 2, lead: int = 3) -> tuple:
    """Frame-level symbol path: short label runs separated by 1..max_gap blank frames."""
    blank = n_tokens
    path = [blank] * int(rng.integers(1, lead + 1))
    tokens = []
    while True:
        run = int(rng.integers(1, max_run + 1))
        gap = int(rng.integers(1, max_gap + 1))
        if len(path) + run + gap > num_frames:
            break
        c = int(rng.integers(n_tokens))
        tokens.append(c)
        path += [c] * run + [blank] * gap
    path += [blank] * (num_frames - len(path))
    return tuple(tokens), tuple(path)


def grid_from_path(rng: np.random.Generator, path: Sequence[int], n_tokens: int,
                   peak: float = 4.0, noise: float = 1.0, frame_shift_ms: int = 40) -> PosteriorGrid:
    """Noisy logits with the path symbol raised ``peak`` above the rest of its row."""
    logits = rng.normal(0.0, noise, size=(len(path), n_tokens + 1))
    rows = np.arange(len(path))
    logits[rows, list(path)] = logits.max(axis=1) + peak
    return PosteriorGrid(_log_normalize(logits), frame_shift_ms)


def planted_grid(rng: np.random.Generator, num_frames: int, n_tokens: int, max_gap: int = 8,
                 peak: float = 4.0, frame_shift_ms: int = 40) -> Planted:
    """Grid whose frame-wise argmax path collapses to a recorded token sequence."""
    tokens, path = plant_alignment(rng, num_frames, n_tokens, max_gap=max_gap)
    grid = grid_from_path(rng, path, n_tokens, peak=peak, frame_shift_ms=frame_shift_ms)
    return Planted(grid, tokens, path)


def blank_heavy_grid(rng: np.random.Generator, num_frames: int, n_tokens: int,
                     silences: Sequence[tuple] = (), label_rate: float = 0.05,
                     peak: float = 6.0, frame_shift_ms: int = 40) -> Planted:
    """Mostly blank frames with sparse labels; ``silences`` ``[start, end)`` are blank-certain."""
    blank = n_tokens
    path = []
    tokens = []
    t = 0
    while t < num_frames:
        if t > 0 and path[-1] == blank and rng.random() < label_rate:
            c = int(rng.integers(n_tokens))
            path.append(c)
            tokens.append(c)
        else:
            path.append(blank)
        t += 1
    silent = np.zeros(num_frames, dtype=bool)
    for start, end in silences:
        silent[max(start, 0):min(end, num_frames)] = True
    # labels inside a silence are dropped so the recorded tokens stay consistent
    kept = []
    for i, z in enumerate(path):
        if silent[i] and z != blank:
            path[i] = blank
        elif z != blank:
            kept.append(z)
    grid = grid_from_path(rng, path, n_tokens, peak=peak, frame_shift_ms=frame_shift_ms)
    logp = np.array(grid.logp, dtype=np.float64)
    logp[silent] = NEG_INF
    logp[silent, blank] = 0.0
    return Planted(PosteriorGrid(logp, frame_shift_ms), tuple(kept), tuple(path))


def vad_outputs(rng: np.random.Generator, num_frames: int, silences: Sequence[tuple] = (),
                n_speech: int = 2, n_noise: int = 2, contrast: float = 3.0,
                noise: float = 0.5) -> tuple:
    """Log-domain VAD node outputs; returns ``(outputs[T, nodes], speech_nodes, noise_nodes)``.

    Speech nodes come first. Frames inside ``silences`` favour the noise nodes.
    """
    out = rng.normal(0.0, noise, size=(num_frames, n_speech + n_noise))
    speech = np.ones(num_frames, dtype=bool)
    for start, end in silences:
        speech[max(start, 0):min(end, num_frames)] = False
    out[speech, :n_speech] += contrast / 2
    out[speech, n_speech:] -= contrast / 2
    out[~speech, :n_speech] -= contrast / 2
    out[~speech, n_speech:] += contrast / 2
    return out, list(range(n_speech)), list(range(n_speech, n_speech + n_noise))


def greedy_collapse(grid: PosteriorGrid) -> tuple:
    """Best-path decode: argmax per frame, merge repeats, drop blanks."""
    blank = grid.vocab - 1
    out = []
    prev = None
    for z in np.argmax(grid.logp, axis=1):
        z = int(z)
        if z != prev and z != blank:
            out.append(z)
        prev = z
    return tuple(out)


def make_grid(style: str, rng: np.random.Generator, num_frames: int, n_tokens: int,
              silences: Sequence[tuple] = (), frame_shift_ms: int = 40,
              peak: Optional[float] = None):
    """Return ``(grid, reference tokens or None)`` for one generated utterance.

    ``peak`` overrides the style's default label logit boost (planted 4, blank_heavy 6).
    """
    if style == "random":
        return random_grid(rng, num_frames, n_tokens, frame_shift_ms=frame_shift_ms), None
    if style == "planted":
        p = planted_grid(rng, num_frames, n_tokens, peak=4.0 if peak is None else peak,
                         frame_shift_ms=frame_shift_ms)
        return p.grid, p.tokens
    if style == "blank_heavy":
        p = blank_heavy_grid(rng, num_frames, n_tokens, silences,
                             peak=6.0 if peak is None else peak, frame_shift_ms=frame_shift_ms)
        return p.grid, p.tokens
    raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
