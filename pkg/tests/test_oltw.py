import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cosine_distance_matrix, distance_to_mask, dtw_pair, full_dtw, path_rows_per_column, run_oltw
from scoretrack.errors import ReferenceExhausted
from scoretrack.features import events_to_frames, frames_to_matrix, render_score
from scoretrack.oltw import Oltw, OltwParams, oltw_start, oltw_step
from scoretrack.score import ScoreDatabase
from scoretrack.sim import PerformanceScript, generate_random_score, simulate


def unit_rows(rng, n, dim=88):
    m = np.abs(rng.normal(size=(n, dim)))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def test_start_at_origin():
    ref = unit_rows(np.random.default_rng(0), 10)
    o = oltw_start(ref)
    assert o.i == 0 and o.j == -1 and o.path_len == 0 and o.normalized_cost == 0.0


def test_start_out_of_range():
    ref = unit_rows(np.random.default_rng(0), 10)
    with pytest.raises(IndexError):
        Oltw(ref, len(ref))
    with pytest.raises(IndexError):
        Oltw(ref, -1)


def test_start_mid_piece_compares_ref_k():
    rng = np.random.default_rng(1)
    ref = unit_rows(rng, 50)
    v = unit_rows(rng, 1)[0]
    o = Oltw(ref, 17)
    pos, cost = oltw_step(o, v)
    assert o._col_lo == 17
    assert o._col[0] == pytest.approx(1 - ref[17] @ v)
    assert pos >= 17


def test_identity_alignment():
    ref = unit_rows(np.random.default_rng(2), 400)
    o = Oltw(ref)
    for j, v in enumerate(ref[:-1]):
        pos, cost = o.step(v)
        assert pos == j
        assert cost <= 1e-9


def test_identity_on_rendered_score():
    ref = render_score(generate_random_score(120, 3))
    pos, o = run_oltw(ref, ref)
    assert np.array_equal(pos, np.arange(len(ref)))
    assert o.normalized_cost <= 1e-9


def test_half_tempo_against_full_dtw():
    ref = unit_rows(np.random.default_rng(3), 300)
    live = np.repeat(ref, 2, axis=0)
    pos, _ = run_oltw(ref, live)
    _, path = full_dtw(ref, live)
    lo, hi = path_rows_per_column(path, len(live))
    j = np.arange(len(live))
    assert np.all(np.abs(pos[20:] - j[20:] / 2) <= 2)
    gap = np.maximum(0, np.maximum(lo - pos, pos - hi))
    assert gap[20:].max() <= 2


def test_unrelated_frames_cost_floor():
    ref = render_score(generate_random_score(200, 4))
    live = unit_rows(np.random.default_rng(4), 100)
    o = Oltw(ref)
    for v in live:
        o.step(v)
    # measured with this seed: about 0.85
    assert o.normalized_cost > 0.5


def test_zero_frames_cost_one():
    ref = unit_rows(np.random.default_rng(5), 30)
    o = Oltw(ref)
    _, cost = o.step(np.zeros(88))
    assert cost == 1.0
    assert cosine_distance_matrix(ref, np.zeros((1, 88)))[0, 0] == 1.0


def test_exhaustion():
    ref = unit_rows(np.random.default_rng(6), 20)
    o = Oltw(ref)
    for v in ref:
        if o.exhausted:
            break
        o.step(v)
    assert o.exhausted
    with pytest.raises(ReferenceExhausted):
        o.step(ref[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 200), st.sampled_from([0.5, 1.0, 2.0]))
def test_monotonic_and_bounded(seed, n, stretch):
    rng = np.random.default_rng(seed)
    ref = unit_rows(rng, n)
    idx = np.minimum((np.arange(int(n * stretch)) / stretch).astype(int), n - 1)
    live = unit_rows(rng, len(idx)) * 0.3 + ref[idx]
    live /= np.linalg.norm(live, axis=1, keepdims=True)
    params = OltwParams(window_c=40)
    o = Oltw(ref, 0, params)
    last = 0
    for v in live:
        if o.exhausted:
            break
        pos, cost = o.step(v)
        assert last <= pos < n and 0 <= cost <= 1 + 1e-12
        assert o._col.size <= params.window_c and o._row.size <= params.window_c
        last = pos


def test_memory_independent_of_length():
    ref = render_score(generate_random_score(1500, 8))
    o = Oltw(ref, 0, OltwParams(window_c=100, cost_horizon=50))
    for v in ref[:5000]:
        o.step(v)
    assert o._col.size <= 100 and o._row.size <= 100 and o._live.shape[0] == 100
    assert len(o._costs) == 50


def test_whole_path_cost_option():
    ref = unit_rows(np.random.default_rng(9), 100)
    o = Oltw(ref, 0, OltwParams(cost_horizon=0))
    for v in ref[:60]:
        o.step(v)
    assert o.path_len == 60


@pytest.mark.parametrize("seed", [0, 1, 4])
def test_agreement_with_full_dtw(seed):
    pair = dtw_pair(seed)
    assert pair is not None
    ref, live, mask, _ = pair
    pos, _ = run_oltw(ref, live)
    assert np.mean(distance_to_mask(pos, mask) <= 5) >= 0.95


def test_true_start_cheaper_than_offset():
    db = ScoreDatabase.from_scores([generate_random_score(600, s) for s in range(50)])
    margins = []
    for seed, sid in enumerate(db.ids):
        sc = db[sid]
        start = 8.0 + (seed % 5) * 4
        perf = simulate(PerformanceScript(sid, sc.nominal_bpm, [(0, 1.1)], seed=seed, start_beat=start,
                                          end_beat=start + 40), db)
        ref = render_score(sc)
        live = frames_to_matrix(events_to_frames(perf.events, duration=perf.duration))
        fr = 50 * sc.seconds_per_beat
        good = Oltw(ref, int(round(start * fr)))
        bad = Oltw(ref, int(round((start + 24) * fr)))
        for v in live:
            good.step(v)
            bad.step(v)
        margins.append(bad.normalized_cost - good.normalized_cost)
    assert min(margins) >= 0.05
