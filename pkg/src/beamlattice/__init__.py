"""Joint CTC/attention beam search over precomputed CTC posterior grids."""

from .batched import Batch, batched_beam_search, decode_all, make_batches, topb_per_utterance
from .core import (NEG_INF, DecodeResult, DecoderConfig, PosteriorGrid, TokenSet, Utterance,
                   pad_to_length, validate_grid)
from .ctc import (CtcForwardState, Window, batch_window, eos_score, init_state,
                  prefix_score_step, window_for)
from .estimators import HardSegmenter, JointCTCBeamSearch, VadSegmenter
from .metrics import EvalReport, cer
from .scorers import LoopScorer, Scorer, TableScorer, UniformScorer, parse_scorer
from .search import beam_search, end_detect_baseline, end_detect_ctc, joint_step_scores
from .segment import NodeMap, Segment, VadConfig, frame_llr, hard_segments, vad_segments

__version__ = "0.1.0"
