"""Identify and follow a performed piece within a database of symbolic scores."""

from .errors import ScoretrackError
from .evaluation import EvalReport, GroundTruth, evaluate
from .fingerprint import FingerprintIndex, Hypothesis, build_index
from .oltw import Oltw, OltwParams
from .score import Note, Score, ScoreDatabase, build_database, dump_score, load_score
from .sim import NoteEvent, PerformanceScript, TruthPoint, concatenate, generate_random_score, simulate
from .tracker import Tracker, TrackerConfig, TrackerOutput, track_events, tracker_run

__all__ = [
    "EvalReport",
    "FingerprintIndex",
    "GroundTruth",
    "Hypothesis",
    "Note",
    "NoteEvent",
    "Oltw",
    "OltwParams",
    "PerformanceScript",
    "Score",
    "ScoreDatabase",
    "ScoretrackError",
    "Tracker",
    "TrackerConfig",
    "TrackerOutput",
    "TruthPoint",
    "build_database",
    "build_index",
    "concatenate",
    "dump_score",
    "evaluate",
    "generate_random_score",
    "load_score",
    "simulate",
    "track_events",
    "tracker_run",
]

__version__ = "0.1.0"
