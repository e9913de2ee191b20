"""scikit-learn style wrappers around the decoder and the segmenters."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .batched import decode_all
from .core import DecoderConfig, PosteriorGrid, Utterance, validate_grid
from .metrics import evaluate
from .scorers import Scorer, UniformScorer, parse_scorer
from .segment import NodeMap, VadConfig, hard_segments, segment_vad_outputs


def check_utterances(X, validate: bool = True) -> list:
    """Coerce grids, arrays or utterances into a list of :class:`Utterance`.

    Bare arrays are taken as ``(T, |C|+1)`` log-posteriors. All items must share a vocab.
    """
    if isinstance(X, (PosteriorGrid, Utterance, np.ndarray)):
        X = [X]
    utts = []
    for i, item in enumerate(X):
        if isinstance(item, Utterance):
            utt = item
        elif isinstance(item, PosteriorGrid):
            utt = Utterance(f"utt{i}", item)
        else:
            utt = Utterance(f"utt{i}", PosteriorGrid(np.asarray(item)))
        if validate:
            problem = validate_grid(utt.grid)
            if problem is not None:
                raise ValueError(f"{utt.id}: {problem}")
        utts.append(utt)
    if not utts:
        raise ValueError("expected at least one utterance")
    vocabs = {u.grid.vocab for u in utts}
    if len(vocabs) != 1:
        raise ValueError(f"utterances disagree on vocab size: {sorted(vocabs)}")
    return utts


def check_frame_counts(X) -> list:
    """Frame counts from integers or from arrays whose first axis is time."""
    if np.isscalar(X):
        X = [X]
    counts = []
    for item in X:
        n = int(item) if np.isscalar(item) else int(np.shape(item)[0])
        if n < 1:
            raise ValueError(f"frame count must be >= 1, got {n}")
        counts.append(n)
    return counts


def _check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted; call fit first")


class JointCTCBeamSearch(BaseEstimator):
    """Joint CTC/attention beam-search decoder.

    ``fit`` only checks the inputs and resolves the scorer; ``predict`` returns one token
    list per utterance. ``scorer`` may be a :class:`Scorer` or a spec string such as
    ``"loop:0:0.9"``; None means uniform.
    """

    def __init__(self, scorer=None, beam_width: int = 3, ctc_weight: float = 0.3,
                 eos_m: int = 3, eos_threshold: float = -10.0, eos_c: int = 2,
                 margin_m1: float = 5, margin_m2: float = math.inf, eos_mode: str = "both",
                 max_steps_ratio: float = 1.0, batch_size: int = 16):
        self.scorer = scorer
        self.beam_width = beam_width
        self.ctc_weight = ctc_weight
        self.eos_m = eos_m
        self.eos_threshold = eos_threshold
        self.eos_c = eos_c
        self.margin_m1 = margin_m1
        self.margin_m2 = margin_m2
        self.eos_mode = eos_mode
        self.max_steps_ratio = max_steps_ratio
        self.batch_size = batch_size

    def _config(self) -> DecoderConfig:
        return DecoderConfig(beam_width=self.beam_width, ctc_weight=self.ctc_weight,
                             eos_m=self.eos_m, eos_threshold=self.eos_threshold,
                             eos_c=self.eos_c, margin_m1=self.margin_m1,
                             margin_m2=self.margin_m2, eos_mode=self.eos_mode,
                             max_steps_ratio=self.max_steps_ratio)

    def _resolve_scorer(self, n_tokens: int) -> Scorer:
        if self.scorer is None:
            return UniformScorer(n_tokens)
        if isinstance(self.scorer, str):
            return parse_scorer(self.scorer, n_tokens)
        if getattr(self.scorer, "n_tokens", n_tokens) != n_tokens:
            raise ValueError(f"scorer covers {self.scorer.n_tokens} tokens, grids have {n_tokens}")
        return self.scorer

    def fit(self, X, y=None):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        utts = check_utterances(X)
        self.config_ = self._config()
        self.n_tokens_ = utts[0].grid.vocab - 1
        self.scorer_ = self._resolve_scorer(self.n_tokens_)
        return self

    def decode(self, X) -> list:
        """Full :class:`DecodeResult` objects, in input order."""
        _check_fitted(self, "scorer_")
        utts = check_utterances(X)
        if utts[0].grid.vocab - 1 != self.n_tokens_:
            raise ValueError(f"fitted for {self.n_tokens_} tokens, got {utts[0].grid.vocab - 1}")
        return decode_all(utts, self.scorer_, self.config_, self.batch_size)

    def predict(self, X) -> list:
        return [res.tokens for res in self.decode(X)]

    def score(self, X, y) -> float:
        """One minus the corpus token error rate against reference sequences ``y``."""
        hyps = self.predict(X)
        refs = {i: list(r) for i, r in enumerate(y)}
        if len(refs) != len(hyps):
            raise ValueError(f"got {len(hyps)} utterances but {len(refs)} references")
        return 1.0 - evaluate(refs, dict(enumerate(hyps))).cer


class HardSegmenter(TransformerMixin, BaseEstimator):
    """Uniform fixed-length cuts; ``transform`` maps frame counts to segment lists."""

    def __init__(self, min_len: int = 475, max_len: int = 500):
        self.min_len = min_len
        self.max_len = max_len

    def fit(self, X=None, y=None):
        if not 0 < self.min_len <= self.max_len:
            raise ValueError(f"need 0 < min_len <= max_len, got {self.min_len}, {self.max_len}")
        self.fitted_ = True
        return self

    def transform(self, X) -> list:
        _check_fitted(self, "fitted_")
        return [hard_segments(n, self.min_len, self.max_len, f"utt{i}")
                for i, n in enumerate(check_frame_counts(X))]


class VadSegmenter(TransformerMixin, BaseEstimator):
    """Segments from per-frame VAD node outputs; ``transform`` takes ``(T, nodes)`` arrays."""

    def __init__(self, speech_nodes=(0,), noise_nodes=(1,), threshold: float = 0.0,
                 smooth_window: int = 5, min_len: int = 375, max_len: int = 500):
        self.speech_nodes = speech_nodes
        self.noise_nodes = noise_nodes
        self.threshold = threshold
        self.smooth_window = smooth_window
        self.min_len = min_len
        self.max_len = max_len

    def fit(self, X=None, y=None):
        self.nodemap_ = NodeMap(self.speech_nodes, self.noise_nodes)
        self.config_ = VadConfig(self.threshold, self.smooth_window, self.min_len, self.max_len)
        return self

    def transform(self, X) -> list:
        _check_fitted(self, "nodemap_")
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = [X]
        out = []
        for i, outputs in enumerate(X):
            outputs = np.asarray(outputs, dtype=np.float64)
            if outputs.ndim != 2:
                raise ValueError(f"VAD outputs must be (frames, nodes), got shape {outputs.shape}")
            out.append(segment_vad_outputs(outputs, self.nodemap_, self.config_, f"utt{i}"))
        return out
