"""Command-line entry point.

Subcommands::

    scoretrack build-index --scores DIR --out INDEX
    scoretrack simulate --index INDEX --script FILE --events OUT --truth OUT [--jumps OUT]
    scoretrack track --index INDEX (--events FILE|- | --audio FILE) --out FILE|-
    scoretrack eval --index INDEX --truth FILE --track FILE [--jumps FILE] --out FILE|- [--plot PNG]

Exit codes: 0 success, 1 input or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import sys
import time
import wave
from typing import IO, Iterator, Sequence

import numpy as np

from .errors import ScoretrackError
from .evaluation import GroundTruth, evaluate
from .features import AudioParams, audio_to_frames, events_from_audio
from .fingerprint import FingerprintIndex, build_index
from .oltw import OltwParams
from .records import (
    event_to_record,
    jump_to_record,
    read_events,
    read_jumps,
    read_outputs,
    read_truth,
    truth_to_record,
    write_records,
)
from .score import build_database
from .sim import PerformanceScript, concatenate, simulate
from .tracker import TrackerConfig, track_events, tracker_run

PROG = "scoretrack"

# dataclass -> flag prefix-free groups; every field becomes --field-name
CONFIG_GROUPS = (
    ("tracker", TrackerConfig),
    ("alignment", OltwParams),
    ("audio front-end", AudioParams),
)


class CliError(Exception):
    """Raised for conditions that should exit with status 1."""


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser, groups=CONFIG_GROUPS) -> None:
    for title, cls in groups:
        g = parser.add_argument_group(f"{title} options")
        for f in dataclasses.fields(cls):
            default = f.default
            g.add_argument(_flag(f.name), dest=f"{cls.__name__}.{f.name}", type=type(default), default=default,
                           metavar=type(default).__name__.upper(), help=f"{cls.__name__}.{f.name}")


def _config(args: argparse.Namespace, cls):
    kw = {f.name: getattr(args, f"{cls.__name__}.{f.name}") for f in dataclasses.fields(cls)}
    try:
        return cls(**kw)
    except ValueError as exc:
        raise CliError(str(exc)) from None


@contextlib.contextmanager
def _open_out(path: str, binary: bool = False):
    if path == "-":
        yield sys.stdout.buffer if binary else sys.stdout
        return
    with open(path, "wb" if binary else "w", encoding=None if binary else "utf-8",
              newline=None if binary else "\n") as fh:
        yield fh


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
        return
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        yield fh


def _load_index(path: str) -> FingerprintIndex:
    try:
        return FingerprintIndex.load(path)
    except OSError as exc:
        raise CliError(f"cannot read index {path}: {exc.strerror}") from None


# build-index ------------------------------------------------------------------


def cmd_build_index(args: argparse.Namespace) -> int:
    db = build_database(args.scores)
    index = build_index(db)
    n_bytes = index.save(args.out)
    print(f"{len(db)} scores, {index.n_postings} tokens")
    print(f"{index.n_tokens} distinct keys, {n_bytes} bytes written to {args.out}", file=sys.stderr)
    return 0


# simulate ------------------------------------------------------------------------


def _load_scripts(path: str) -> list[PerformanceScript]:
    with _open_in(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc.msg})") from None
    docs = doc if isinstance(doc, list) else [doc]
    if not docs or not all(isinstance(d, dict) for d in docs):
        raise CliError(f"{path}: expected a script object or a non-empty list of them")
    try:
        return [PerformanceScript.from_dict(d) for d in docs]
    except TypeError as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_simulate(args: argparse.Namespace) -> int:
    index = _load_index(args.index)
    scripts = _load_scripts(args.script)
    if args.score is not None:
        scripts[0] = dataclasses.replace(scripts[0], score_id=args.score)
    perf = simulate(scripts[0], index.db)
    for s in scripts[1:]:
        perf = concatenate(perf, simulate(s, index.db), args.gap)
    with _open_out(args.events) as fh:
        write_records(fh, (event_to_record(e) for e in perf.events))
    with _open_out(args.truth) as fh:
        write_records(fh, (truth_to_record(p) for p in perf.truth))
    if args.jumps:
        with _open_out(args.jumps) as fh:
            write_records(fh, (jump_to_record(t) for t in perf.jump_times))
    return 0


# track ------------------------------------------------------------------------------


def read_wav(path: str) -> tuple[np.ndarray, int]:
    """16-bit little-endian PCM WAV -> float samples in [-1, 1] and the rate."""
    try:
        with wave.open(path, "rb") as w:
            if w.getsampwidth() != 2:
                raise CliError(f"{path}: only 16-bit PCM is supported")
            rate, channels = w.getframerate(), w.getnchannels()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise CliError(f"{path}: not a PCM WAV file ({exc})") from None
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}") from None
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels != 1:
        x = x.reshape(-1, channels)
    return x, rate


def read_raw_float32(path: str) -> np.ndarray:
    if path == "-":
        data = sys.stdin.buffer.read()
    else:
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise CliError(f"cannot open {path}: {exc.strerror}") from None
    if len(data) % 4:
        raise CliError(f"{path}: raw float32 stream length is not a multiple of 4 bytes")
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def _track_outputs(args: argparse.Namespace, index: FingerprintIndex, config, oltw, fin) -> Iterator:
    threaded = not args.single_thread
    if args.audio is None:
        return track_events(read_events(fin), index, config, oltw, threaded=threaded)
    audio = _config(args, AudioParams)
    if abs(audio.frame_rate - config.frame_rate) > 1e-9:
        raise CliError(f"audio frame rate {audio.frame_rate:g} Hz differs from --frame-rate {config.frame_rate:g}")
    if args.raw_float32:
        x, rate = read_raw_float32(args.audio), audio.sample_rate
    else:
        x, rate = read_wav(args.audio)
    events = list(events_from_audio(x, audio, rate))
    return tracker_run(audio_to_frames(x, audio, rate), events, index, config, oltw, threaded=threaded)


def cmd_track(args: argparse.Namespace) -> int:
    config = _config(args, TrackerConfig)
    oltw = _config(args, OltwParams)
    index = _load_index(args.index)
    t0 = time.perf_counter()
    n = 0
    last_t = 0.0
    with contextlib.ExitStack() as stack:
        fin = stack.enter_context(_open_in(args.events)) if args.audio is None else None
        fout = stack.enter_context(_open_out(args.out))
        for out in _track_outputs(args, index, config, oltw, fin):
            write_records(fout, [out.to_dict()], flush=True)
            n += 1
            last_t = out.t_perf
    elapsed = time.perf_counter() - t0
    if not args.quiet:
        print(f"{n} outputs up to t={last_t:.2f} s in {elapsed:.2f} s of processing", file=sys.stderr)
    return 0


# eval -------------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    index = _load_index(args.index)
    with _open_in(args.truth) as fh:
        truth = read_truth(fh)
    if not truth:
        raise CliError(f"{args.truth}: ground truth is empty")
    with _open_in(args.track) as fh:
        outputs = read_outputs(fh)
    jumps: list[float] = []
    if args.jumps:
        with _open_in(args.jumps) as fh:
            jumps = read_jumps(fh)
    gt = GroundTruth(truth)
    report = evaluate(outputs, gt, jumps, db=index.db, processing_s=args.processing_s)
    with _open_out(args.out) as fh:
        fh.write(report.to_json())
    if args.plot:
        from .plotting import plot_tracking

        plot_tracking(outputs, gt, args.plot, jumps, report)
    return 0


# parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog=PROG, description="Identify and follow performances of indexed scores.",
                                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    b = sub.add_parser("build-index", help="build a fingerprint index from a directory of JSON scores",
                       formatter_class=fmt)
    b.add_argument("--scores", required=True, metavar="DIR", help="directory of *.json scores")
    b.add_argument("--out", required=True, metavar="PATH", help="index file to write")
    b.set_defaults(func=cmd_build_index)

    s = sub.add_parser("simulate", help="synthesise a performance and its ground truth", formatter_class=fmt)
    s.add_argument("--index", required=True, metavar="PATH", help="index holding the score database")
    s.add_argument("--script", required=True, metavar="FILE",
                   help="performance script JSON; a list of scripts is played back to back")
    s.add_argument("--score", default=None, metavar="ID", help="override the (first) script's score id")
    s.add_argument("--gap", type=float, default=0.0, metavar="SECONDS", help="pause between listed scripts")
    s.add_argument("--events", required=True, metavar="OUT", help="event records ('-' for stdout)")
    s.add_argument("--truth", required=True, metavar="OUT", help="ground-truth records")
    s.add_argument("--jumps", default=None, metavar="OUT", help="jump-time records")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="follow a performance (events or audio)", formatter_class=fmt)
    t.add_argument("--index", required=True, metavar="PATH", help="fingerprint index")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--events", default="-", metavar="FILE", help="event records ('-' for stdin)")
    src.add_argument("--audio", default=None, metavar="FILE", help="16-bit mono WAV (or raw float32, see below)")
    t.add_argument("--raw-float32", action="store_true", help="--audio is headerless little-endian float32")
    t.add_argument("--out", default="-", metavar="FILE", help="output records ('-' for stdout)")
    t.add_argument("--single-thread", action="store_true",
                   help="run fingerprint queries inline instead of on a background thread")
    t.add_argument("--quiet", action="store_true", help="no summary on stderr")
    _add_config_flags(t)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score tracker output against ground truth", formatter_class=fmt)
    e.add_argument("--index", required=True, metavar="PATH", help="index (for nominal tempi)")
    e.add_argument("--truth", required=True, metavar="FILE", help="ground-truth records")
    e.add_argument("--track", required=True, metavar="FILE", help="tracker output records")
    e.add_argument("--jumps", default=None, metavar="FILE", help="jump-time records")
    e.add_argument("--processing-s", type=float, default=None, metavar="SECONDS",
                   help="processing time, reported as a real-time factor")
    e.add_argument("--out", default="-", metavar="REPORT", help="JSON report ('-' for stdout)")
    e.add_argument("--plot", default=None, metavar="PNG", help="also write a tracked-vs-true figure")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ScoretrackError, ValueError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
