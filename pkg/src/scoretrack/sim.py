"""Synthetic performances with ground truth.

A :class:`PerformanceScript` describes how a score is played: a base tempo,
piecewise tempo multipliers keyed by score beat, Gaussian onset jitter,
random note drops and insertions, and structural jumps. :func:`simulate`
turns a script into a chord-merged :class:`NoteEvent` stream plus the
ground-truth mapping from performance time to score beat.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SimulationError
from .score import Note, Score, ScoreDatabase

CHORD_MERGE_S = 0.001
DEFAULT_JITTER_S = 0.015
DEFAULT_P_DROP = 0.02
DEFAULT_P_INSERT = 0.02


@dataclass(frozen=True)
class NoteEvent:
    t: float
    pitches: tuple[int, ...]

    def __post_init__(self):
        if not self.pitches:
            raise ValueError("NoteEvent needs at least one pitch")
        if self.t < 0:
            raise ValueError(f"NoteEvent time {self.t} < 0")
        if any(not 0 <= p <= 127 for p in self.pitches):
            raise ValueError(f"pitch out of range in {self.pitches}")


@dataclass(frozen=True)
class TruthPoint:
    t_perf: float
    score_beat: float
    score_id: str = ""
    # contiguous stretch of playing; increments at every jump or switch
    segment: int = 0


@dataclass
class PerformanceScript:
    score_id: str
    base_tempo_bpm: float
    tempo_segments: list[tuple[float, float]] = field(default_factory=list)
    jitter_std: float = DEFAULT_JITTER_S
    p_drop: float = DEFAULT_P_DROP
    p_insert: float = DEFAULT_P_INSERT
    jumps: list[tuple[float, float]] = field(default_factory=list)
    seed: int = 0
    # where the performer starts and stops (beats); None means score bounds
    start_beat: float = 0.0
    end_beat: float | None = None

    def __post_init__(self):
        self.tempo_segments = [(float(b), float(m)) for b, m in self.tempo_segments]
        self.jumps = [(float(a), float(b)) for a, b in self.jumps]
        if self.base_tempo_bpm <= 0:
            raise SimulationError("base_tempo_bpm must be > 0")
        if any(m <= 0 for _, m in self.tempo_segments):
            raise SimulationError("tempo multipliers must be > 0")
        froms = [b for b, _ in self.tempo_segments]
        if froms != sorted(froms):
            raise SimulationError("tempo_segments must be sorted by from_beat")
        if self.jitter_std < 0:
            raise SimulationError("jitter_std must be >= 0")
        for name in ("p_drop", "p_insert"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SimulationError(f"{name} must lie in [0, 1]")

    @classmethod
    def identity(cls, score: Score, **overrides) -> "PerformanceScript":
        """A noiseless, nominal-tempo rendition of ``score``."""
        kw = dict(jitter_std=0.0, p_drop=0.0, p_insert=0.0)
        kw.update(overrides)
        return cls(score_id=score.id, base_tempo_bpm=score.nominal_bpm, **kw)

    def to_dict(self) -> dict:
        return {
            "score_id": self.score_id,
            "base_tempo_bpm": self.base_tempo_bpm,
            "tempo_segments": [list(s) for s in self.tempo_segments],
            "jitter_std": self.jitter_std,
            "p_drop": self.p_drop,
            "p_insert": self.p_insert,
            "jumps": [list(j) for j in self.jumps],
            "seed": self.seed,
            "start_beat": self.start_beat,
            "end_beat": self.end_beat,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PerformanceScript":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise SimulationError(f"unknown script fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class Performance:
    events: list[NoteEvent]
    truth: list[TruthPoint]
    jump_times: list[float]  # performance seconds at which each jump lands
    performed_notes: int = 0
    dropped_notes: int = 0
    inserted_notes: int = 0

    @property
    def duration(self) -> float:
        ends = [e.t for e in self.events[-1:]] + [p.t_perf for p in self.truth[-1:]]
        return max(ends, default=0.0)


class TempoMap:
    """Piecewise-constant tempo over score beats; integrates beats to seconds."""

    def __init__(self, base_bpm: float, segments: Sequence[tuple[float, float]]):
        self.base_bpm = base_bpm
        self._bounds = [b for b, _ in segments]
        self._mults = [m for _, m in segments]

    def multiplier(self, beat: float) -> float:
        k = bisect.bisect_right(self._bounds, beat) - 1
        return 1.0 if k < 0 else self._mults[k]

    def elapsed(self, b0: float, b1: float) -> float:
        """Seconds needed to play from beat ``b0`` to ``b1`` (``b0 <= b1``)."""
        knots = [b0] + [b for b in self._bounds if b0 < b < b1] + [b1]
        total = 0.0
        for lo, hi in zip(knots, knots[1:]):
            total += (hi - lo) * 60.0 / (self.base_bpm * self.multiplier(lo))
        return total


def _segments(script: PerformanceScript, score: Score) -> list[tuple[float, float]]:
    end = score.end_beat if script.end_beat is None else script.end_beat
    # end_beat bounds the final segment only; after a backward jump it may lie before start_beat
    if not 0 <= script.start_beat < score.end_beat:
        raise SimulationError(f"start_beat {script.start_beat} outside [0, {score.end_beat})")
    spans = []
    cur = script.start_beat
    for at, to in script.jumps:
        if at > score.end_beat or to > score.end_beat or to < 0 or at < 0:
            raise SimulationError(f"jump ({at} -> {to}) beyond score end {score.end_beat}")
        if at <= cur:
            raise SimulationError(f"jump at beat {at} is not after segment start {cur}")
        spans.append((cur, at))
        cur = to
    if cur >= end:
        raise SimulationError(f"final segment starts at {cur}, past end beat {end}")
    spans.append((cur, end))
    return spans


def simulate(script: PerformanceScript, db: ScoreDatabase) -> Performance:
    """Render ``script`` into a NoteEvent stream and its ground truth.

    The result is a pure function of the script (including its seed) and the
    score; two calls return identical streams.
    """
    if script.score_id not in db:
        raise SimulationError(f"unknown score id {script.score_id!r}")
    score = db[script.score_id]
    spans = _segments(script, score)
    tmap = TempoMap(script.base_tempo_bpm, script.tempo_segments)
    rng = np.random.default_rng(script.seed)

    notes_by_onset = score.onsets
    performed: list[tuple[float, int, float | None, int]] = []  # (t, pitch, beat or None, segment)
    jump_times = []
    t0 = 0.0
    dropped = inserted = 0
    sigma = script.jitter_std
    for k, (lo, hi) in enumerate(spans):
        if k > 0:
            jump_times.append(t0)
        last = k == len(spans) - 1
        i0 = int(np.searchsorted(notes_by_onset, lo, side="left"))
        i1 = int(np.searchsorted(notes_by_onset, hi, side="right" if last else "left"))
        for n in score.notes[i0:i1]:
            t_nom = t0 + tmap.elapsed(lo, n.onset)
            if rng.random() < script.p_drop:
                dropped += 1
                continue
            t = t_nom + _jitter(rng, sigma)
            performed.append((max(t, 0.0), n.pitch, n.onset, k))
            if rng.random() < script.p_insert:
                step = int(rng.choice((-2, -1, 1, 2)))
                pitch = min(max(n.pitch + step, 0), 127)
                t_ins = t_nom + _jitter(rng, sigma)
                performed.append((max(t_ins, 0.0), pitch, None, k))
                inserted += 1
        t0 += tmap.elapsed(lo, hi)

    performed.sort(key=lambda r: (r[0], r[1]))
    truth = [TruthPoint(t, b, score.id, k) for t, _, b, k in performed if b is not None]
    return Performance(
        events=merge_chords([(t, p) for t, p, _, _ in performed], CHORD_MERGE_S),
        truth=truth,
        jump_times=jump_times,
        performed_notes=len(truth),
        dropped_notes=dropped,
        inserted_notes=inserted,
    )


def _jitter(rng: np.random.Generator, sigma: float) -> float:
    if sigma <= 0:
        return 0.0
    return float(np.clip(rng.normal(0.0, sigma), -3 * sigma, 3 * sigma))


def merge_chords(notes: Sequence[tuple[float, int]], tol: float) -> list[NoteEvent]:
    """Group time-sorted (t, pitch) pairs into NoteEvents.

    A note joins the current group when it lies less than ``tol`` seconds
    after the group's previous note; the group takes its earliest time.
    """
    events: list[NoteEvent] = []
    group: set[int] = set()
    g_t = prev_t = None
    for t, p in notes:
        if group and t - prev_t < tol:
            group.add(int(p))
        else:
            if group:
                events.append(NoteEvent(g_t, tuple(sorted(group))))
            group = {int(p)}
            g_t = t
        prev_t = t
    if group:
        events.append(NoteEvent(g_t, tuple(sorted(group))))
    return events


def concatenate(first: Performance, second: Performance, gap_s: float = 0.0) -> Performance:
    """Play ``second`` right after ``first`` (a piece switch).

    The switch instant is appended to ``jump_times``.
    """
    offset = first.duration + gap_s
    shifted = [NoteEvent(e.t + offset, e.pitches) for e in second.events]
    seg0 = max((p.segment for p in first.truth), default=-1) + 1
    truth = first.truth + [
        TruthPoint(p.t_perf + offset, p.score_beat, p.score_id, p.segment + seg0) for p in second.truth
    ]
    return Performance(
        events=first.events + shifted,
        truth=truth,
        jump_times=first.jump_times + [offset] + [t + offset for t in second.jump_times],
        performed_notes=first.performed_notes + second.performed_notes,
        dropped_notes=first.dropped_notes + second.dropped_notes,
        inserted_notes=first.inserted_notes + second.inserted_notes,
    )


def generate_random_score(
    n_notes: int,
    seed: int,
    score_id: str | None = None,
    nominal_bpm: float = 120.0,
) -> Score:
    """Random piano-ish material on an eighth-note grid.

    Each onset carries 1-4 distinct pitches from MIDI 36-96; successive
    onsets are 1-4 eighths apart. Exactly ``n_notes`` notes are produced.
    """
    if n_notes < 1:
        raise ValueError("n_notes must be >= 1")
    rng = np.random.default_rng(seed)
    notes: list[Note] = []
    beat = 0.0
    while len(notes) < n_notes:
        size = min(int(rng.choice(4, p=[0.4, 0.3, 0.2, 0.1])) + 1, n_notes - len(notes))
        chord = rng.choice(np.arange(36, 97), size=size, replace=False)
        for p in sorted(int(x) for x in chord):
            dur = 0.5 * int(rng.integers(1, 5))
            notes.append(Note(pitch=p, onset=beat, duration=dur))
        beat += 0.5 * (int(rng.choice(4, p=[0.4, 0.3, 0.2, 0.1])) + 1)
    return Score(
        id=score_id or f"random-{seed:06d}",
        title=f"random score (seed {seed})",
        nominal_bpm=nominal_bpm,
        notes=tuple(notes),
    )
