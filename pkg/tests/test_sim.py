import numpy as np
import pytest

from scoretrack.errors import SimulationError
from scoretrack.score import Note, Score, ScoreDatabase, beat_to_seconds
from scoretrack.sim import (
    NoteEvent,
    PerformanceScript,
    TempoMap,
    concatenate,
    generate_random_score,
    merge_chords,
    simulate,
)


@pytest.fixture
def grid_score():
    # 32 beats, one note per beat
    return Score("grid", "", 120, tuple(Note(60 + (k % 12), float(k), 1.0) for k in range(32)))


def _db(*scores):
    return ScoreDatabase.from_scores(scores)


def test_identity_transport(grid_score):
    perf = simulate(PerformanceScript.identity(grid_score), _db(grid_score))
    assert [e.t for e in perf.events] == [beat_to_seconds(grid_score, n.onset) for n in grid_score.notes]
    assert all(p.t_perf == beat_to_seconds(grid_score, p.score_beat) for p in perf.truth)


def test_double_tempo_halves_intervals(grid_score):
    db = _db(grid_score)
    base = simulate(PerformanceScript.identity(grid_score), db)
    fast = simulate(PerformanceScript.identity(grid_score, tempo_segments=[(0, 2.0)]), db)
    np.testing.assert_allclose(np.diff([e.t for e in fast.events]), np.diff([e.t for e in base.events]) / 2)


def test_jump_schedule(grid_score):
    perf = simulate(PerformanceScript.identity(grid_score, jumps=[(16, 0)]), _db(grid_score))
    beats = [p.score_beat for p in perf.truth]
    first = [n.onset for n in grid_score.notes if n.onset < 16]
    assert beats == first + [n.onset for n in grid_score.notes]
    assert perf.performed_notes == 16 + 32
    assert [p.segment for p in perf.truth] == [0] * 16 + [1] * 32
    assert perf.jump_times == [8.0]


def test_unknown_score_and_bad_jump(grid_score):
    db = _db(grid_score)
    with pytest.raises(SimulationError):
        simulate(PerformanceScript("missing", 120), db)
    with pytest.raises(SimulationError):
        simulate(PerformanceScript.identity(grid_score, jumps=[(40, 0)]), db)


def test_seeded_determinism():
    sc = generate_random_score(300, 3)
    db = _db(sc)
    script = PerformanceScript(sc.id, 120, [(0, 0.8), (20, 1.2)], jumps=[(40, 10)], seed=11)
    assert simulate(script, db) == simulate(script, db)


def test_counts_reconcile():
    sc = generate_random_score(500, 5)
    script = PerformanceScript(sc.id, 120, seed=2, p_drop=0.1, p_insert=0.1)
    perf = simulate(script, _db(sc))
    assert perf.performed_notes + perf.dropped_notes == len(sc.notes)
    n_entries = sum(len(e.pitches) for e in perf.events)
    # merging may fold an insert onto an equal-pitched note; never adds entries
    assert n_entries <= perf.performed_notes + perf.inserted_notes


def test_jitter_clipped():
    sc = generate_random_score(400, 9)
    db = _db(sc)
    clean = simulate(PerformanceScript(sc.id, 120, jitter_std=0.0, p_drop=0, p_insert=0), db)
    noisy = simulate(PerformanceScript(sc.id, 120, jitter_std=0.02, p_drop=0, p_insert=0, seed=1), db)
    nominal = {b: t for t, b in ((p.t_perf, p.score_beat) for p in clean.truth)}
    dev = [abs(p.t_perf - nominal[p.score_beat]) for p in noisy.truth if p.score_beat > 0]
    assert max(dev) <= 0.06 + 1e-12 and np.std(dev) > 0.005


def test_truth_inverts_through_tempo_map():
    sc = generate_random_score(300, 4)
    segs = [(0, 0.9), (30, 1.3), (70, 0.75)]
    perf = simulate(PerformanceScript(sc.id, 100, segs, jitter_std=0, p_drop=0, p_insert=0), _db(sc))
    tmap = TempoMap(100, segs)
    for p in perf.truth:
        assert tmap.elapsed(0.0, p.score_beat) == pytest.approx(p.t_perf, abs=1e-9)


def test_merge_chords():
    ev = merge_chords([(0.0, 60), (0.0005, 64), (0.5, 62), (0.5009, 60)], 0.001)
    assert ev == [NoteEvent(0.0, (60, 64)), NoteEvent(0.5, (60, 62))]


def test_concatenate_switch():
    a, b = generate_random_score(100, 1), generate_random_score(100, 2)
    db = _db(a, b)
    pa = simulate(PerformanceScript.identity(a, end_beat=20), db)
    pb = simulate(PerformanceScript.identity(b), db)
    both = concatenate(pa, pb, gap_s=1.0)
    assert both.jump_times == [pa.duration + 1.0]
    assert {p.score_id for p in both.truth} == {a.id, b.id}
    assert both.truth[len(pa.truth)].segment == 1


def test_random_score_contract():
    assert len(generate_random_score(1, 0).notes) == 1
    assert generate_random_score(2000, 7) == generate_random_score(2000, 7)
    sc = generate_random_score(2000, 7)
    assert all(36 <= n.pitch <= 96 for n in sc.notes)
    assert all((n.onset * 2) == int(n.onset * 2) for n in sc.notes)
    per_onset = np.unique(sc.onsets, return_counts=True)[1]
    assert per_onset.min() >= 1 and per_onset.max() <= 4


def test_corpus_distinct():
    seqs = {tuple((n.pitch, n.onset) for n in generate_random_score(2000, s).notes) for s in range(50)}
    assert len(seqs) == 50


def test_script_dict_round_trip():
    s = PerformanceScript("x", 100, [(0, 1.1)], jumps=[(8, 0)], seed=5, end_beat=30)
    assert PerformanceScript.from_dict(s.to_dict()) == s
    with pytest.raises(SimulationError):
        PerformanceScript.from_dict({**s.to_dict(), "bogus": 1})


def test_backward_jump_may_end_before_start(grid_score):
    s = PerformanceScript.identity(grid_score, start_beat=20, end_beat=8, jumps=[(24, 2)])
    beats = [p.score_beat for p in simulate(s, _db(grid_score)).truth]
    assert beats == [float(b) for b in list(range(20, 24)) + list(range(2, 9))]  # the final span includes its end beat
    with pytest.raises(SimulationError):
        simulate(PerformanceScript.identity(grid_score, start_beat=20, end_beat=8), _db(grid_score))
    with pytest.raises(SimulationError):
        simulate(PerformanceScript.identity(grid_score, start_beat=40), _db(grid_score))
