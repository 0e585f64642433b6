"""Multi-agent arbitration over fingerprint hypotheses.

The tracker advances on the frame clock. At each frame boundary it

1. applies the hypotheses returned by the identification lane for the
   previous frame: each one spawns an OLTW agent unless a live agent on the
   same score already sits within ``spawn_exclusion_beats``; a full pool only
   admits it by replacing the worst agent, and only if that agent is worse
   than the median;
2. steps every live agent with the frame;
3. retires exhausted agents and warmed agents that stayed above
   ``kill_ratio`` times the best warmed cost for ``kill_sustain_s``;
4. reports the warmed agent with the lowest normalized cost;
5. hands the current event window to the identification lane when enough
   new events arrived.

New agents are not started cold. The tracker keeps the last ``warmup_s`` of
frames; an agent is seeded where its hypothesis places the performer at the
start of the supporting evidence (at most ``warmup_s`` ago) and replays the
buffered frames up to the present. Its age counts from that seed time.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import StreamOrderError
from .features import FRAME_RATE, EventFramer, FeatureFrame, render_score
from .fingerprint import (
    BUCKET_TOLERANCE,
    CHORD_TOL_S,
    MAX_HYPOTHESES,
    MIN_COVERAGE,
    MIN_STRENGTH,
    QUERY_WINDOW,
    FingerprintIndex,
    Hypothesis,
)
from .oltw import Oltw, OltwParams
from .score import Score
from .sim import NoteEvent

WARMING, ELIGIBLE, DEAD = "warming", "active-eligible", "dead"
_EPS = 1e-12


@dataclass(frozen=True)
class TrackerConfig:
    max_agents: int = 8
    warmup_s: float = 2.0
    kill_ratio: float = 1.5
    kill_sustain_s: float = 2.0
    spawn_exclusion_beats: float = 4.0
    query_every_n_events: int = 1
    query_window: int = QUERY_WINDOW
    # the newest events are also queried on their own so that material after
    # a jump is not outvoted by tokens from before it; 0 disables
    short_query_window: int = 10
    min_strength: int = MIN_STRENGTH
    min_coverage: float = MIN_COVERAGE
    max_hypotheses: int = MAX_HYPOTHESES
    bucket_tolerance: int = BUCKET_TOLERANCE
    chord_tol_s: float = CHORD_TOL_S
    # agents start this many beats before the hypothesis (OLTW cannot move back)
    spawn_backoff_beats: float = 1.0
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        if self.max_agents < 1 or self.query_every_n_events < 1 or self.query_window < 1:
            raise ValueError("max_agents, query_every_n_events and query_window must be >= 1")
        if self.short_query_window < 0:
            raise ValueError("short_query_window must be >= 0")
        for name in ("warmup_s", "kill_ratio", "kill_sustain_s", "spawn_exclusion_beats", "frame_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TrackerOutput:
    t_perf: float
    score_id: str
    beat: float
    confidence: float
    agent_id: int
    n_agents: int

    def to_dict(self) -> dict:
        return {
            "t_perf": self.t_perf,
            "score_id": self.score_id,
            "beat": self.beat,
            "confidence": self.confidence,
            "agent_id": self.agent_id,
            "n_agents": self.n_agents,
        }


@dataclass
class Agent:
    agent_id: int
    hypothesis: Hypothesis
    oltw: Oltw
    score: Score
    born_at: float
    status: str = WARMING
    beat: float = 0.0
    bad_since: float | None = None

    @property
    def cost(self) -> float:
        return self.oltw.normalized_cost

    def age(self, t: float) -> float:
        return t - self.born_at


class Tracker:
    """Deterministic tracking state machine; feed it with :meth:`step`."""

    def __init__(
        self,
        index: FingerprintIndex,
        config: TrackerConfig = TrackerConfig(),
        oltw_params: OltwParams = OltwParams(),
        threaded: bool = False,
    ):
        self.index = index
        self.db = index.db
        self.config = config
        self.oltw_params = oltw_params
        self.agents: list[Agent] = []
        self._next_id = 0
        self._refs: dict[str, np.ndarray] = {}
        self._window: deque[NoteEvent] = deque(maxlen=config.query_window)
        self._since_query = 0
        self._history: deque[FeatureFrame] = deque(maxlen=int(math.ceil(config.warmup_s * config.frame_rate)) + 1)
        self._pending: Future | list[Hypothesis] | None = None
        self._pending_t = 0.0
        self._pool = ThreadPoolExecutor(max_workers=1) if threaded else None
        self._last_t = -math.inf

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # helpers ----------------------------------------------------------------

    def reference(self, score_id: str) -> np.ndarray:
        ref = self._refs.get(score_id)
        if ref is None:
            ref = render_score(self.db[score_id], self.config.frame_rate)
            self._refs[score_id] = ref
        return ref

    def live_agents(self) -> list[Agent]:
        return [a for a in self.agents if a.status != DEAD]

    def _beat_of_frame(self, score: Score, frame: int) -> float:
        beat = frame / self.config.frame_rate / score.seconds_per_beat
        return min(max(beat, 0.0), score.end_beat)

    def _query(self, events: list[NoteEvent], t_now: float) -> list[Hypothesis]:
        c = self.config
        windows = [events]
        if 0 < c.short_query_window < len(events):
            windows.append(events[-c.short_query_window:])
        hyps = []
        for w in windows:
            hyps += self.index.query(
                w,
                t_now,
                min_strength=c.min_strength,
                min_coverage=c.min_coverage,
                max_hypotheses=c.max_hypotheses,
                bucket_tolerance=c.bucket_tolerance,
                chord_tol=c.chord_tol_s,
            )
        return hyps

    # spawning ---------------------------------------------------------------

    def _spawn(self, hyp: Hypothesis, t_query: float) -> None:
        c = self.config
        score = self.db[hyp.score_id]
        ref = self.reference(hyp.score_id)
        replay = [f for f in self._history if f.t <= t_query]
        t_seed = max(hyp.evidence_start, t_query - c.warmup_s)
        replay = [f for f in replay if f.t >= t_seed]
        if replay:
            t_seed = replay[0].t
        else:
            t_seed = t_query
        sec_per_beat_perf = hyp.tempo_factor * score.seconds_per_beat
        seed_beat = hyp.beat - (t_query - t_seed) / sec_per_beat_perf - c.spawn_backoff_beats
        seed_beat = min(max(seed_beat, 0.0), score.end_beat)
        start = int(round(seed_beat * score.seconds_per_beat * c.frame_rate))
        start = min(max(start, 0), ref.shape[0] - 1)
        agent = Agent(
            agent_id=self._next_id,
            hypothesis=hyp,
            oltw=Oltw(ref, start, self.oltw_params),
            score=score,
            born_at=t_seed,
            beat=self._beat_of_frame(score, start),
        )
        self._next_id += 1
        for f in replay:
            if agent.oltw.exhausted:
                agent.status = DEAD
                break
            pos, _ = agent.oltw.step(f.v)
            agent.beat = self._beat_of_frame(score, pos)
        self.agents.append(agent)

    def _admit(self, hyps: Sequence[Hypothesis], t_query: float) -> None:
        c = self.config
        for hyp in hyps:
            live = self.live_agents()
            if any(
                a.score.id == hyp.score_id and abs(a.beat - hyp.beat) <= c.spawn_exclusion_beats
                for a in live
            ):
                continue
            if len(live) >= c.max_agents:
                costs = [a.cost for a in live]
                worst = max(live, key=lambda a: (a.cost, -a.agent_id))
                if not worst.cost > float(np.median(costs)):
                    continue
                worst.status = DEAD
            self._spawn(hyp, t_query)
        self.agents = self.live_agents()

    # main step ----------------------------------------------------------------

    def step(self, frame: FeatureFrame, new_events: Iterable[NoteEvent] = ()) -> TrackerOutput | None:
        c = self.config
        t = frame.t
        if t < self._last_t:
            raise StreamOrderError(f"frame at {t} s precedes {self._last_t} s")
        self._last_t = t

        # (1)-(2) hypotheses from the previous boundary take effect now
        if self._pending is not None:
            hyps = self._pending.result() if isinstance(self._pending, Future) else self._pending
            self._pending = None
            self._admit(hyps, self._pending_t)

        # (3) step every live agent
        for a in self.agents:
            if a.oltw.exhausted:
                a.status = DEAD
                continue
            pos, _ = a.oltw.step(frame.v)
            a.beat = self._beat_of_frame(a.score, pos)
            if a.status == WARMING and a.age(t) >= c.warmup_s:
                a.status = ELIGIBLE
        self._history.append(frame)

        # (4) retirement
        warmed = [a for a in self.agents if a.status == ELIGIBLE]
        if warmed:
            best = min(a.cost for a in warmed)
            for a in warmed:
                if a.cost > c.kill_ratio * best:
                    if a.bad_since is None:
                        a.bad_since = t
                    if t - a.bad_since >= c.kill_sustain_s:
                        a.status = DEAD
                else:
                    a.bad_since = None
        self.agents = self.live_agents()

        # identification lane: results apply at the next frame boundary
        new_events = list(new_events)
        if new_events:
            self._window.extend(new_events)
            self._since_query += len(new_events)
        if self._since_query >= c.query_every_n_events and self._window:
            self._since_query = 0
            window = list(self._window)
            self._pending_t = t
            if self._pool is not None:
                self._pending = self._pool.submit(self._query, window, t)
            else:
                self._pending = self._query(window, t)

        # (5) output
        chosen = select_active([a for a in self.agents if a.status == ELIGIBLE])
        if chosen is None:
            return None
        best, conf = chosen
        return TrackerOutput(
            t_perf=t,
            score_id=best.score.id,
            beat=best.beat,
            confidence=conf,
            agent_id=best.agent_id,
            n_agents=len(self.agents),
        )


def select_active(warmed: Sequence[Agent]) -> tuple[Agent, float] | None:
    """Lowest-cost agent (ties to the lowest id) and its confidence margin."""
    if not warmed:
        return None
    ranked = sorted(warmed, key=lambda a: (a.cost, a.agent_id))
    if len(ranked) == 1:
        return ranked[0], 1.0
    c1, c2 = ranked[0].cost, ranked[1].cost
    conf = (c2 - c1) / max(c2, _EPS)
    return ranked[0], min(max(conf, 0.0), 1.0)


def tracker_run(
    frames: Iterable[FeatureFrame],
    events: Iterable[NoteEvent],
    index: FingerprintIndex,
    config: TrackerConfig = TrackerConfig(),
    oltw_params: OltwParams = OltwParams(),
    threaded: bool = False,
) -> Iterator[TrackerOutput]:
    """Fold :meth:`Tracker.step` over time-ordered frame and event streams.

    An event is delivered with the first frame strictly later than it, so at
    equal timestamps the frame is processed first.
    """
    ev_iter = iter(events)
    pending = next(ev_iter, None)
    last_ev_t = -math.inf
    with Tracker(index, config, oltw_params, threaded) as tracker:
        for frame in frames:
            batch = []
            while pending is not None and pending.t < frame.t:
                if pending.t < last_ev_t:
                    raise StreamOrderError(f"event at {pending.t} s precedes {last_ev_t} s")
                last_ev_t = pending.t
                batch.append(pending)
                pending = next(ev_iter, None)
            out = tracker.step(frame, batch)
            if out is not None:
                yield out


def track_events(
    events: Iterable[NoteEvent],
    index: FingerprintIndex,
    config: TrackerConfig = TrackerConfig(),
    oltw_params: OltwParams = OltwParams(),
    threaded: bool = False,
    tail_s: float = 1.0,
) -> Iterator[TrackerOutput]:
    """Symbolic-input mode: frames are synthesised from the events themselves.

    Outputs are yielded as soon as their frame is final, i.e. when the next
    later event arrives (or at end of stream, for the last ``tail_s``).
    """
    framer = EventFramer(config.frame_rate)
    held: list[NoteEvent] = []
    last_t = -math.inf

    with Tracker(index, config, oltw_params, threaded) as tracker:

        def run(frames: list[FeatureFrame]):
            nonlocal held
            for f in frames:
                k = 0
                while k < len(held) and held[k].t < f.t:
                    k += 1
                batch, held = held[:k], held[k:]
                out = tracker.step(f, batch)
                if out is not None:
                    yield out

        for ev in events:
            if ev.t < last_t:
                raise StreamOrderError(f"event at {ev.t} s precedes {last_t} s")
            last_t = ev.t
            frames = framer.push(ev)
            yield from run(frames)
            held.append(ev)
        if last_t > -math.inf:
            yield from run(framer.finish(last_t + tail_s))
