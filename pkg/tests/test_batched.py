import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamlattice.batched import (Batch, batched_beam_search, decode_all, make_batches,
                                 topb_per_utterance)
from beamlattice.core import DecoderConfig, PosteriorGrid, Utterance, pad_to_length
from beamlattice.scorers import Scorer, TableScorer, UniformScorer
from beamlattice.search import beam_search
from beamlattice.synth import planted_grid, random_grid


def _utts(rng, lengths, n_tokens=3):
    return [Utterance(f"u{i}", planted_grid(rng, t, n_tokens).grid) for i, t in enumerate(lengths)]


def _same(a, b):
    assert a.id == b.id
    assert a.tokens == b.tokens
    assert a.joint_logp == b.joint_logp
    assert a.label_times == b.label_times
    assert a.steps_taken == b.steps_taken
    assert a.eos_trigger == b.eos_trigger
    assert a.stats == b.stats


def test_make_batches_sorts_and_chunks(rng):
    utts = _utts(rng, [100, 50, 200, 60])
    batches = make_batches(utts, 2)
    assert [[u.true_frames for u in b.utterances] for b in batches] == [[50, 60], [100, 200]]
    assert [b.order for b in batches] == [[1, 3], [0, 2]]
    assert batches[1].padded_T == 200
    assert len(make_batches(utts, 10)) == 1
    assert make_batches([], 4) == []
    with pytest.raises(ValueError):
        make_batches(utts, 0)


@given(st.lists(st.integers(1, 500), min_size=1, max_size=30), st.integers(1, 8))
def test_sorted_chunks_have_minimal_spread(lengths, size):
    g = PosteriorGrid(np.zeros((1, 1)))
    utts = [Utterance(str(i), pad_to_length(g, t), t) for i, t in enumerate(lengths)]
    batches = make_batches(utts, size)
    flat = [u.true_frames for b in batches for u in b.utterances]
    assert flat == sorted(lengths)
    assert sorted(i for b in batches for i in b.order) == list(range(len(lengths)))


def test_topb_per_utterance():
    scores = np.array([[[1.0, 5.0], [3.0, 2.0]], [[0.0, 0.0], [0.0, 0.0]]])
    sel = topb_per_utterance(scores, 1)
    assert sel[:, 0].tolist() == [1, 0]
    assert topb_per_utterance(scores, 3)[1].tolist() == [0, 1, 2]
    shifted = scores + np.array([7.0, -2.0])[:, None, None]
    np.testing.assert_array_equal(topb_per_utterance(shifted, 2), topb_per_utterance(scores, 2))
    with pytest.raises(ValueError):
        topb_per_utterance(np.zeros((2, 3)), 1)


def test_single_utterance_batch_matches_beam_search(rng):
    (utt,) = _utts(rng, [80])
    sc = TableScorer.random(3, 2, seed=4)
    _same(batched_beam_search(Batch([utt]), sc)[0], beam_search(utt, sc))


def test_identical_utterances(rng):
    (utt,) = _utts(rng, [60])
    twin = Utterance("twin", utt.grid)
    a, b = batched_beam_search(Batch([utt, twin]), UniformScorer(3))
    assert a.tokens == b.tokens and a.joint_logp == b.joint_logp


@pytest.mark.parametrize("m2", [math.inf, 20])
def test_mixed_lengths_match_sequential(rng, m2):
    utts = _utts(rng, [50, 200, 75, 120, 51])
    sc = TableScorer.random(3, 2, seed=8)
    cfg = DecoderConfig(margin_m2=m2)
    for got, utt in zip(batched_beam_search(Batch(utts), sc, cfg), utts):
        _same(got, beam_search(utt, sc, cfg))


def test_padded_grids_decode_to_their_true_length(rng):
    utts = _utts(rng, [40, 90])
    padded = [Utterance(u.id, pad_to_length(u.grid, 90), u.true_frames) for u in utts]
    sc = TableScorer.random(3, 2, seed=1)
    for got, want in zip(batched_beam_search(Batch(padded), sc), batched_beam_search(Batch(utts), sc)):
        _same(got, want)


def test_permutation_permutes_results(rng):
    utts = _utts(rng, [30, 70, 45, 60])
    sc = TableScorer.random(3, 2, seed=2)
    base = batched_beam_search(Batch(utts), sc)
    perm = [2, 0, 3, 1]
    moved = batched_beam_search(Batch([utts[i] for i in perm]), sc)
    for i, res in zip(perm, moved):
        _same(res, base[i])


def test_done_utterances_stay_frozen(rng):
    utts = _utts(rng, [20, 150])
    snapshots = {}

    def trace(step, searches):
        for s in searches:
            if s.done:
                key = (s.utt.id, len(s.finished), tuple(h.tokens for h in s.beam))
                snapshots.setdefault(s.utt.id, key)
                assert snapshots[s.utt.id] == key

    batched_beam_search(Batch(utts), UniformScorer(3), trace=trace)
    assert "u0" in snapshots


def test_scorer_queries_bounded(rng):
    utts = _utts(rng, [40, 80, 60])
    results = batched_beam_search(Batch(utts), UniformScorer(3), DecoderConfig(beam_width=4))
    steps = max(r.steps_taken for r in results)
    assert sum(r.stats["scorer_queries"] for r in results) <= steps * len(utts) * 4


def test_decode_all_keeps_input_order(rng):
    utts = _utts(rng, [90, 30, 60, 45, 75])
    out = decode_all(utts, UniformScorer(3), batch_size=2)
    assert [r.id for r in out] == [u.id for u in utts]


def test_errors_name_the_utterances(rng):
    class Boom(Scorer):
        n_tokens = 3

        def score(self, utt_id, prefix):
            raise RuntimeError("model crashed")

    with pytest.raises(RuntimeError, match="u0, u1"):
        batched_beam_search(Batch(_utts(rng, [10, 12])), Boom())


def test_mixed_vocab_rejected(rng):
    utts = [Utterance("a", random_grid(rng, 5, 2)), Utterance("b", random_grid(rng, 5, 3))]
    with pytest.raises(ValueError, match="token set"):
        batched_beam_search(Batch(utts), UniformScorer(2))
