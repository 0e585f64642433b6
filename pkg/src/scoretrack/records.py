"""Line-delimited JSON records shared by the simulator, tracker and CLI.

One compact JSON object per line, UTF-8, no padding:

* events  ``{"t": 1.25, "pitches": [60, 64]}``
* truth   ``{"t_perf": 1.25, "score_beat": 2.5, "score_id": "x", "segment": 0}``
* jumps   ``{"t": 12.0}``
* outputs ``{"t_perf", "score_id", "beat", "confidence", "agent_id", "n_agents"}``

Blank lines are ignored. Readers report the 1-based line number of the
first malformed record.
"""

from __future__ import annotations

import json
import math
from typing import IO, Callable, Iterable, Iterator, TypeVar

from .errors import RecordError
from .sim import NoteEvent, TruthPoint
from .tracker import TrackerOutput

T = TypeVar("T")


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_records(fh: IO[str], records: Iterable[dict], flush: bool = False) -> int:
    n = 0
    for r in records:
        fh.write(dumps(r) + "\n")
        if flush:
            fh.flush()
        n += 1
    return n


def iter_records(lines: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON ({exc.msg})", line_no) from None
        if not isinstance(doc, dict):
            raise RecordError("record is not an object", line_no)
        yield line_no, doc


def _number(doc: dict, key: str, line_no: int) -> float:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise RecordError(f"field {key!r} must be a finite number", line_no)
    return float(v)


def _parsed(lines: Iterable[str], parse: Callable[[dict, int], T]) -> Iterator[T]:
    for line_no, doc in iter_records(lines):
        try:
            yield parse(doc, line_no)
        except RecordError:
            raise
        except (ValueError, TypeError) as exc:
            raise RecordError(str(exc), line_no) from None


# events ----------------------------------------------------------------------


def event_to_record(e: NoteEvent) -> dict:
    return {"t": e.t, "pitches": list(e.pitches)}


def _event(doc: dict, line_no: int) -> NoteEvent:
    t = _number(doc, "t", line_no)
    pitches = doc.get("pitches")
    if not isinstance(pitches, list) or not pitches:
        raise RecordError("field 'pitches' must be a non-empty list", line_no)
    if any(isinstance(p, bool) or not isinstance(p, int) for p in pitches):
        raise RecordError("pitches must be integers", line_no)
    return NoteEvent(t, tuple(sorted(set(pitches))))


def read_events(lines: Iterable[str]) -> Iterator[NoteEvent]:
    return _parsed(lines, _event)


# ground truth ------------------------------------------------------------------


def truth_to_record(p: TruthPoint) -> dict:
    return {"t_perf": p.t_perf, "score_beat": p.score_beat, "score_id": p.score_id, "segment": p.segment}


def _truth(doc: dict, line_no: int) -> TruthPoint:
    sid = doc.get("score_id", "")
    seg = doc.get("segment", 0)
    if not isinstance(sid, str):
        raise RecordError("field 'score_id' must be a string", line_no)
    if isinstance(seg, bool) or not isinstance(seg, int):
        raise RecordError("field 'segment' must be an integer", line_no)
    return TruthPoint(_number(doc, "t_perf", line_no), _number(doc, "score_beat", line_no), sid, seg)


def read_truth(lines: Iterable[str]) -> list[TruthPoint]:
    return list(_parsed(lines, _truth))


# jumps ------------------------------------------------------------------------


def jump_to_record(t: float) -> dict:
    return {"t": t}


def read_jumps(lines: Iterable[str]) -> list[float]:
    return list(_parsed(lines, lambda d, n: _number(d, "t", n)))


# tracker output -----------------------------------------------------------------


def _output(doc: dict, line_no: int) -> TrackerOutput:
    sid = doc.get("score_id")
    if not isinstance(sid, str):
        raise RecordError("field 'score_id' must be a string", line_no)
    ints = []
    for key in ("agent_id", "n_agents"):
        v = doc.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise RecordError(f"field {key!r} must be an integer", line_no)
        ints.append(v)
    return TrackerOutput(
        t_perf=_number(doc, "t_perf", line_no),
        score_id=sid,
        beat=_number(doc, "beat", line_no),
        confidence=_number(doc, "confidence", line_no),
        agent_id=ints[0],
        n_agents=ints[1],
    )


def read_outputs(lines: Iterable[str]) -> list[TrackerOutput]:
    return list(_parsed(lines, _output))
