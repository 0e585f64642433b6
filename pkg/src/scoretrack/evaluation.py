"""Metrics that turn tracker output and ground truth into report numbers.

The true position at a performance time comes from linear interpolation
between the ground-truth points of one contiguous segment; a time covered by
no segment (for example the pause between the last note before a jump and
the first note after it) has no truth and is skipped. Where segments overlap
because of timing jitter the later segment wins.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .score import ScoreDatabase, beat_to_seconds
from .sim import TruthPoint
from .tracker import TrackerOutput

INF_MARKER = "inf"
IDENT_HOLD_S = 1.0
RECOVERY_TOL_BEATS = 1.0


class GroundTruth:
    """Piecewise-linear lookup of the true score position."""

    def __init__(self, points: Iterable[TruthPoint]):
        points = sorted(points, key=lambda p: (p.segment, p.t_perf, p.score_beat))
        if not points:
            raise ValueError("ground truth is empty")
        self.segments: list[tuple[str, np.ndarray, np.ndarray]] = []
        k = 0
        while k < len(points):
            seg = points[k].segment
            m = k
            while m < len(points) and points[m].segment == seg:
                m += 1
            chunk = points[k:m]
            ids = {p.score_id for p in chunk}
            if len(ids) != 1:
                raise ValueError(f"segment {seg} mixes scores {sorted(ids)}")
            t = np.array([p.t_perf for p in chunk])
            b = np.array([p.score_beat for p in chunk])
            self.segments.append((chunk[0].score_id, t, b))
            k = m
        self.segments.sort(key=lambda s: s[1][0])
        self._starts = np.array([s[1][0] for s in self.segments])

    @property
    def start(self) -> float:
        return float(self._starts[0])

    @property
    def end(self) -> float:
        return max(float(s[1][-1]) for s in self.segments)

    def expected_score(self, t: float) -> str:
        """Score being played at ``t``: the latest segment started by then."""
        k = int(np.searchsorted(self._starts, t, side="right")) - 1
        return self.segments[max(k, 0)][0]

    def at(self, t: float) -> tuple[str, float] | None:
        k = int(np.searchsorted(self._starts, t, side="right")) - 1
        while k >= 0:
            sid, ts, bs = self.segments[k]
            if ts[0] <= t <= ts[-1]:
                return sid, float(np.interp(t, ts, bs))
            k -= 1
        return None


@dataclass
class EvalReport:
    ident_latency_s: float
    align_err_ms: list[float] = field(default_factory=list)
    recovery_times_s: list[float] = field(default_factory=list)
    rtf: float | None = None
    n_outputs: int = 0

    @property
    def identified(self) -> bool:
        return math.isfinite(self.ident_latency_s)

    @property
    def align_err_mean_ms(self) -> float | None:
        return float(np.mean(self.align_err_ms)) if self.align_err_ms else None

    @property
    def align_err_median_ms(self) -> float | None:
        return float(np.median(self.align_err_ms)) if self.align_err_ms else None

    @property
    def align_err_p95_ms(self) -> float | None:
        return float(np.percentile(self.align_err_ms, 95)) if self.align_err_ms else None

    def to_dict(self) -> dict:
        def enc(x):
            return INF_MARKER if isinstance(x, float) and math.isinf(x) else x

        return {
            "ident_latency_s": enc(self.ident_latency_s),
            "identified": self.identified,
            "n_outputs": self.n_outputs,
            "n_align": len(self.align_err_ms),
            "align_err_mean_ms": self.align_err_mean_ms,
            "align_err_median_ms": self.align_err_median_ms,
            "align_err_p95_ms": self.align_err_p95_ms,
            "align_err_ms": list(self.align_err_ms),
            "recovery_times_s": [enc(x) for x in self.recovery_times_s],
            "rtf": self.rtf,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        def dec(x):
            return math.inf if x == INF_MARKER else float(x)

        return cls(
            ident_latency_s=dec(doc["ident_latency_s"]),
            align_err_ms=[float(x) for x in doc.get("align_err_ms", [])],
            recovery_times_s=[dec(x) for x in doc.get("recovery_times_s", [])],
            rtf=doc.get("rtf"),
            n_outputs=int(doc.get("n_outputs", 0)),
        )


def _ident_latency(outputs: Sequence[TrackerOutput], truth: GroundTruth, t0: float) -> float:
    """Time of the first output that opens a correct run lasting IDENT_HOLD_S."""
    target = truth.segments[0][0]
    run_start = None
    for o in outputs:
        if o.score_id == target and truth.expected_score(o.t_perf) == target:
            if run_start is None:
                run_start = o.t_perf
            if o.t_perf - run_start >= IDENT_HOLD_S:
                return run_start - t0
        else:
            run_start = None
    # a correct run that lasts to the end of the stream also counts
    return math.inf if run_start is None else run_start - t0


def evaluate(
    outputs: Iterable[TrackerOutput],
    truth: Iterable[TruthPoint] | GroundTruth,
    jumps: Sequence[float] = (),
    db: ScoreDatabase | None = None,
    processing_s: float | None = None,
    t0: float = 0.0,
) -> EvalReport:
    """Score a tracker run against ground truth.

    Args:
        outputs: Tracker outputs, ordered by time.
        truth: Ground-truth points or a prepared :class:`GroundTruth`.
        jumps: Performance times at which jumps or piece switches land.
        db: Scores used to convert beats to milliseconds; without it the
            error is expressed at 120 bpm.
        processing_s: Wall-clock processing time, for the real-time factor.
        t0: Performance start on the output clock.
    """
    outputs = sorted(outputs, key=lambda o: o.t_perf)
    gt = truth if isinstance(truth, GroundTruth) else GroundTruth(truth)

    def seconds(sid: str, beat: float) -> float:
        if db is not None and sid in db:
            return beat_to_seconds(db[sid], beat)
        return beat * 0.5

    errs = []
    for o in outputs:
        hit = gt.at(o.t_perf)
        if hit is None or hit[0] != o.score_id:
            continue
        errs.append(abs(seconds(o.score_id, o.beat) - seconds(o.score_id, hit[1])) * 1000.0)

    recoveries = []
    for j in sorted(jumps):
        rec = math.inf
        for o in outputs:
            if o.t_perf < j:
                continue
            hit = gt.at(o.t_perf)
            if hit is not None and hit[0] == o.score_id and abs(o.beat - hit[1]) < RECOVERY_TOL_BEATS:
                rec = o.t_perf - j
                break
        recoveries.append(rec)

    rtf = None
    duration = gt.end - t0
    if processing_s is not None and duration > 0:
        rtf = processing_s / duration
    return EvalReport(
        ident_latency_s=_ident_latency(outputs, gt, t0),
        align_err_ms=errs,
        recovery_times_s=recoveries,
        rtf=rtf,
        n_outputs=len(outputs),
    )
