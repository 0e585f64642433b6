"""Symbolic scores, the score database, and beat/time conversion.

A score file is a single UTF-8 JSON document::

    {
      "id": "chopin-op10-1",
      "title": "Etude in C major",
      "nominal_bpm": 120,
      "notes": [
        {"pitch": 60, "onset_beats": 0.0, "duration_beats": 1.0},
        ...
      ]
    }

``id`` is a non-empty string, ``title`` a string, ``nominal_bpm`` a positive
number (defaults to 120 when absent), and ``notes`` a non-empty list whose
records carry exactly the three fields shown. Notes may appear in any order;
they are sorted by (onset, pitch) on load. :func:`dump_score` writes the same
layout with ``indent=None`` and keys in the order shown above.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DatabaseError, ScoreParseError, ScoreValidationError

DEFAULT_BPM = 120.0


@dataclass(frozen=True)
class Note:
    pitch: int
    onset: float  # beats
    duration: float  # beats

    def __post_init__(self):
        if not isinstance(self.pitch, (int, np.integer)) or isinstance(self.pitch, bool):
            raise ScoreValidationError(f"pitch must be an integer, got {self.pitch!r}")
        if not 0 <= self.pitch <= 127:
            raise ScoreValidationError(f"pitch {self.pitch} outside MIDI range 0-127")
        if not np.isfinite(self.onset) or self.onset < 0:
            raise ScoreValidationError(f"onset {self.onset} must be finite and >= 0")
        if not np.isfinite(self.duration) or self.duration <= 0:
            raise ScoreValidationError(f"duration {self.duration} must be > 0")


@dataclass(frozen=True)
class Score:
    """An immutable score; notes are kept sorted by (onset, pitch)."""

    id: str
    title: str
    nominal_bpm: float
    notes: tuple[Note, ...]

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ScoreValidationError("score id must be a non-empty string")
        if not np.isfinite(self.nominal_bpm) or self.nominal_bpm <= 0:
            raise ScoreValidationError(f"nominal_bpm {self.nominal_bpm} must be > 0")
        notes = tuple(sorted(self.notes, key=lambda n: (n.onset, n.pitch)))
        if not notes:
            raise ScoreValidationError(f"score {self.id!r} has no notes")
        for prev, cur in zip(notes, notes[1:]):
            if prev.onset == cur.onset and prev.pitch == cur.pitch:
                raise ScoreValidationError(
                    f"score {self.id!r}: duplicate note pitch {cur.pitch} at beat {cur.onset}"
                )
        object.__setattr__(self, "notes", notes)

    @property
    def seconds_per_beat(self) -> float:
        return 60.0 / self.nominal_bpm

    @cached_property
    def onsets(self) -> np.ndarray:
        return np.array([n.onset for n in self.notes], dtype=np.float64)

    @cached_property
    def pitches(self) -> np.ndarray:
        return np.array([n.pitch for n in self.notes], dtype=np.int64)

    @cached_property
    def end_beat(self) -> float:
        """Beat at which the last sounding note ends."""
        return max(n.onset + n.duration for n in self.notes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "nominal_bpm": self.nominal_bpm,
            "notes": [
                {"pitch": n.pitch, "onset_beats": n.onset, "duration_beats": n.duration}
                for n in self.notes
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Score":
        if not isinstance(doc, Mapping):
            raise ScoreParseError("score document must be a JSON object")
        try:
            raw_notes = doc["notes"]
            score_id = doc["id"]
        except KeyError as exc:
            raise ScoreParseError(f"missing field {exc.args[0]!r}") from None
        if not isinstance(raw_notes, list):
            raise ScoreParseError("'notes' must be a list")
        notes = []
        for k, rec in enumerate(raw_notes):
            try:
                notes.append(
                    Note(
                        pitch=rec["pitch"],
                        onset=float(rec["onset_beats"]),
                        duration=float(rec["duration_beats"]),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ScoreParseError(f"note {k}: malformed record ({exc})") from None
        bpm = doc.get("nominal_bpm", DEFAULT_BPM)
        if isinstance(bpm, bool) or not isinstance(bpm, (int, float)):
            raise ScoreParseError(f"nominal_bpm must be a number, got {bpm!r}")
        return cls(
            id=score_id,
            title=str(doc.get("title", "")),
            nominal_bpm=float(bpm),
            notes=tuple(notes),
        )


def beat_to_seconds(score: Score, beat: float) -> float:
    return beat * 60.0 / score.nominal_bpm


def seconds_to_beat(score: Score, seconds: float) -> float:
    return seconds * score.nominal_bpm / 60.0


def load_score(path: str | os.PathLike) -> Score:
    """Read one score file.

    Raises:
        ScoreParseError: the file is not a well-formed score document.
        ScoreValidationError: a note or header field violates an invariant.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScoreParseError(f"{path}: {exc}") from None
    return Score.from_dict(doc)


def dump_score(score: Score, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(score.to_dict(), fh)
        fh.write("\n")


@dataclass(frozen=True)
class ScoreDatabase:
    scores: Mapping[str, Score]
    total_notes: int = field(init=False)

    def __post_init__(self):
        ordered = {sid: self.scores[sid] for sid in sorted(self.scores)}
        for sid, sc in ordered.items():
            if sc.id != sid:
                raise DatabaseError(f"map key {sid!r} does not match score id {sc.id!r}")
        object.__setattr__(self, "scores", ordered)
        object.__setattr__(self, "total_notes", sum(len(s.notes) for s in ordered.values()))

    @classmethod
    def from_scores(cls, scores: Iterable[Score]) -> "ScoreDatabase":
        table: dict[str, Score] = {}
        for sc in scores:
            if sc.id in table:
                raise DatabaseError(f"duplicate score id {sc.id!r}")
            table[sc.id] = sc
        if not table:
            raise DatabaseError("database has no scores")
        return cls(table)

    @property
    def ids(self) -> list[str]:
        return list(self.scores)

    def __getitem__(self, score_id: str) -> Score:
        return self.scores[score_id]

    def __contains__(self, score_id: object) -> bool:
        return score_id in self.scores

    def __len__(self) -> int:
        return len(self.scores)


def build_database(directory: str | os.PathLike) -> ScoreDatabase:
    """Load every ``*.json`` score file in ``directory``.

    Files are visited in sorted name order, so the result does not depend on
    the filesystem's enumeration order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatabaseError(f"{directory} is not a directory")
    paths = sorted(p for p in directory.iterdir() if p.suffix == ".json" and p.is_file())
    if not paths:
        raise DatabaseError(f"no score files in {directory}")
    seen: dict[str, Path] = {}
    scores = []
    for p in paths:
        sc = load_score(p)
        if sc.id in seen:
            raise DatabaseError(f"duplicate score id {sc.id!r} in {seen[sc.id].name} and {p.name}")
        seen[sc.id] = p
        scores.append(sc)
    return ScoreDatabase.from_scores(scores)
