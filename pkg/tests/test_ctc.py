import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamlattice.checks import prefix_chain, random_tiny_grid
from beamlattice.core import NEG_INF, PosteriorGrid
from beamlattice.ctc import (NotACtcLabel, Window, batch_window, eos_score, extend_state,
                             init_state, prefix_score_step, score_sequence, window_for)
from beamlattice.oracle import oracle_exact_score, oracle_prefix_score

seeds = st.integers(0, 2 ** 32 - 1)


def test_init_state_blank_products(g1):
    st0 = init_state(g1)
    assert st0.gamma_b[1] == pytest.approx(math.log(0.4))
    assert st0.gamma_b[2] == pytest.approx(math.log(0.2))
    assert (st0.gamma_n <= NEG_INF).all()
    assert st0.tau == st0.tau_tilde == 1 and st0.prefix_len == 0


def test_init_state_certain_blank():
    st0 = init_state(PosteriorGrid.from_probs([[0.0, 1.0]]))
    assert st0.gamma_b[1] == 0.0


def test_g1_step(g1):
    psi, nxt = prefix_score_step(init_state(g1), None, 0, g1)
    assert psi == pytest.approx(math.log(0.8))
    assert nxt.tau == 1 and nxt.tau_tilde == 2
    assert nxt.gamma_n[2] == pytest.approx(math.log(0.5))
    assert nxt.gamma_b[2] == pytest.approx(math.log(0.3))
    assert eos_score(nxt) == pytest.approx(math.log(0.8))
    assert eos_score(init_state(g1)) == pytest.approx(math.log(0.2))


def test_forced_alignment():
    grid = PosteriorGrid.from_probs([[1.0, 0.0]])
    psi, _ = prefix_score_step(init_state(grid), None, 0, grid)
    assert psi == 0.0


def test_rejects_blank_as_label(g1):
    with pytest.raises(NotACtcLabel, match="not a CTC label"):
        prefix_score_step(init_state(g1), None, 1, g1)


def test_eos_needs_final_frame(g1):
    st0 = init_state(g1)
    short = type(st0)(st0.gamma_n, st0.gamma_b, 0, 1)
    with pytest.raises(ValueError):
        eos_score(short)


@pytest.mark.parametrize("args, want", [
    ((30, 42, 5, 20, 4, 100), (25, 62)),
    ((3, 10, 5, math.inf, 6, 100), (6, 100)),
    ((50, 60, math.inf, math.inf, 7, 100), (7, 100)),
    ((90, 95, 0, 0, 99, 100), (95, 95)),
])
def test_window_for(args, want):
    w = window_for(*args)
    assert (w.s, w.e) == want


def test_batch_window():
    assert batch_window([Window(25, 62), Window(10, 90)]) == Window(10, 90)
    assert batch_window([Window(5, 5)]) == Window(5, 5)
    with pytest.raises(ValueError):
        batch_window([])
    with pytest.raises(ValueError):
        Window(4, 3)


@given(st.lists(st.tuples(st.integers(1, 50), st.integers(0, 50)), min_size=1, max_size=8))
def test_batch_window_contains_inputs(pairs):
    windows = [Window(s, s + d) for s, d in pairs]
    merged = batch_window(windows)
    assert all(merged.s <= w.s and w.e <= merged.e for w in windows)


@given(seeds)
def test_prefix_chain_matches_enumeration(seed):
    grid = random_tiny_grid(np.random.default_rng(seed), 5, 3)
    for prefix, psi, state in prefix_chain(grid, 3):
        want = oracle_prefix_score(prefix, grid)
        if want <= NEG_INF / 2:
            assert psi <= NEG_INF / 2
            continue
        assert psi == pytest.approx(want, abs=1e-9)
        got = eos_score(extend_state(state, grid.log_probs(), grid.num_frames))
        assert got == pytest.approx(oracle_exact_score(prefix, grid), abs=1e-9)


@given(seeds)
def test_extension_never_gains_mass(seed):
    grid = random_tiny_grid(np.random.default_rng(seed), 6, 3)
    scores = {(): 0.0}
    for prefix, psi, _ in prefix_chain(grid, 4):
        scores[prefix] = psi
        assert psi <= scores[prefix[:-1]] + 1e-12


@given(seeds)
def test_tau_is_non_decreasing(seed):
    grid = random_tiny_grid(np.random.default_rng(seed), 6, 3)
    for prefix, _, state in prefix_chain(grid, 4):
        assert 1 <= state.tau <= grid.num_frames
        assert 1 <= state.tau_tilde <= grid.num_frames
        if len(prefix) > 1:
            parent = score_parent_tau(grid, prefix[:-1])
            assert state.tau >= parent


def score_parent_tau(grid, prefix):
    state, last = init_state(grid), None
    for c in prefix:
        _, state = prefix_score_step(state, last, c, grid)
        last = c
    return state.tau


@given(seeds, st.integers(1, 4))
def test_infinite_margins_equal_unrestricted(seed, step):
    grid = random_tiny_grid(np.random.default_rng(seed), 6, 2)
    state = init_state(grid)
    full = window_for(1, 1, math.inf, math.inf, step, grid.num_frames)
    a, _ = prefix_score_step(state, None, 0, grid, full)
    b, _ = prefix_score_step(state, None, 0, grid,
                             Window(min(step, grid.num_frames), grid.num_frames))
    assert a == b


def test_score_sequence(g1):
    psi, exact = score_sequence((0,), g1)
    assert psi == pytest.approx(math.log(0.8)) and exact == pytest.approx(math.log(0.8))
    psi, exact = score_sequence((0, 0), g1)
    assert psi == exact == NEG_INF


def test_restricted_window_drops_mass_outside(g1):
    # the label may only start at frame 2, which leaves blank at t1 then a at t2
    psi, _ = prefix_score_step(init_state(g1), None, 0, g1, Window(2, 2))
    assert psi == pytest.approx(math.log(0.4 * 0.5))
