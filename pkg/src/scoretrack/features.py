"""Feature front-end: semitone-band frames and note events.

Both the live performance and the score reference are mapped into the same
88-dimensional space (one band per piano key, MIDI 21-108). Frames are
L2-normalised so the downstream aligner can use ``1 - dot(u, v)`` as cosine
distance.

Two routes lead into that space:

* audio: Hann-windowed spectrum sampled at key centres -> ``log(1 + g*x)``
  -> L2 normalisation (:func:`audio_to_frames`), plus spectral-flux onset
  detection for note events (:func:`events_from_audio`);
* symbolic: note events -> exponentially decaying harmonic patterns
  (:func:`events_to_frames`, :class:`EventFramer`, :func:`render_score`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.signal import get_window

from .errors import StreamOrderError, UnsupportedAudioError
from .score import Score, beat_to_seconds
from .sim import NoteEvent, merge_chords

N_BANDS = 88
LOWEST_MIDI = 21
FRAME_RATE = 50.0
DECAY_TAU_S = 0.5
# (semitone offset, relative weight) of the synthetic harmonic pattern
HARMONICS = ((0, 1.0), (12, 0.5), (19, 0.33))
RENDER_TAIL_S = 2.0
RENDER_TAIL_BEATS = 4.0
# bands below this MIDI number are read from a spectrum whose window is
# LONG_WINDOW_FACTOR times fft_size; semitones there are only 1.6-8 Hz apart
LOW_REGISTER_MIDI = 48
LONG_WINDOW_FACTOR = 4


def midi_to_hz(p: float) -> float:
    return 440.0 * 2.0 ** ((p - 69) / 12.0)


@dataclass(frozen=True)
class FeatureFrame:
    t: float
    v: np.ndarray


@dataclass(frozen=True)
class AudioParams:
    sample_rate: int = 44100
    fft_size: int = 2048
    hop: int = 882
    onset_threshold: float = 0.5
    log_compression: float = 10.0

    def __post_init__(self):
        for name in ("sample_rate", "fft_size", "hop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hop > self.fft_size:
            raise ValueError("hop must not exceed fft_size")
        if self.onset_threshold <= 0 or self.log_compression <= 0:
            raise ValueError("onset_threshold and log_compression must be positive")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop


def l2_normalize(m: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalisation leaving all-zero rows at zero."""
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


# audio route ---------------------------------------------------------------


@lru_cache(maxsize=8)
def semitone_kernel(n: int, sample_rate: int, midi_lo: int, midi_hi: int) -> np.ndarray:
    """Hann-windowed complex exponentials at key centres ``midi_lo..midi_hi-1``.

    Rows evaluate the windowed DTFT of an ``n``-sample frame exactly at each
    key's centre frequency, scaled so a unit sinusoid there reads 1.
    """
    win = get_window("hann", n)
    k = np.arange(n) - n // 2
    f = np.array([midi_to_hz(p) for p in range(midi_lo, midi_hi)])
    return win * np.exp(-2j * np.pi * np.outer(f, k) / sample_rate) / (win.sum() / 2)


class _Spectrum:
    """Log-compressed semitone magnitudes for one centred frame.

    The Hann main lobe is unimodal, so sampling it at key centres puts a
    steady tone's energy maximum in its own band. Low keys use a longer
    window: their partials sit only a few Hz apart.
    """

    def __init__(self, params: AudioParams):
        self.p = params
        self.n_short = params.fft_size
        self.n_long = LONG_WINDOW_FACTOR * params.fft_size
        sr = params.sample_rate
        self.k_low = semitone_kernel(self.n_long, sr, LOWEST_MIDI, LOW_REGISTER_MIDI)
        self.k_high = semitone_kernel(self.n_short, sr, LOW_REGISTER_MIDI, LOWEST_MIDI + N_BANDS)

    def bands(self, long_frame: np.ndarray) -> np.ndarray:
        """``long_frame`` holds LONG_WINDOW_FACTOR*fft_size samples centred on the frame time."""
        off = (self.n_long - self.n_short) // 2
        short = long_frame[off:off + self.n_short]
        x = np.concatenate([np.abs(self.k_low @ long_frame), np.abs(self.k_high @ short)])
        return np.log1p(self.p.log_compression * x)


def _check_audio(samples: np.ndarray, params: AudioParams, sample_rate: int | None) -> np.ndarray:
    if sample_rate is not None and sample_rate != params.sample_rate:
        raise UnsupportedAudioError(
            f"sample rate {sample_rate} Hz unsupported (expected {params.sample_rate}; no resampler)"
        )
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise UnsupportedAudioError("audio must be mono")
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise UnsupportedAudioError("audio must be a finite, non-empty sample stream")
    return x


def _band_spectrogram(x: np.ndarray, params: AudioParams) -> tuple[np.ndarray, np.ndarray]:
    spec = _Spectrum(params)
    half = spec.n_long // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])
    n_frames = 1 + x.size // params.hop
    out = np.empty((n_frames, N_BANDS))
    for k in range(n_frames):
        c = k * params.hop  # frame centre, in unpadded samples
        out[k] = spec.bands(padded[c:c + spec.n_long])
    times = np.arange(n_frames) * params.hop / params.sample_rate
    return times, out


def audio_to_frames(
    samples: np.ndarray,
    params: AudioParams = AudioParams(),
    sample_rate: int | None = None,
) -> Iterator[FeatureFrame]:
    """Yield one L2-normalised semitone frame per hop.

    Frame ``k`` is centred on sample ``k * hop`` (the signal is zero-padded
    on both sides), so ``t = k * hop / sample_rate``.
    """
    x = _check_audio(samples, params, sample_rate)
    times, bands = _band_spectrogram(x, params)
    for t, v in zip(times, l2_normalize(bands)):
        yield FeatureFrame(float(t), v)


def spectral_flux(bands: np.ndarray) -> np.ndarray:
    """Half-wave rectified frame-to-frame increase, summed over bands."""
    diff = np.diff(bands, axis=0, prepend=bands[:1])
    return np.maximum(diff, 0.0).sum(axis=1)


def pick_onsets(flux: np.ndarray, threshold: float, max_w: int = 3, mean_w: int = 10) -> list[int]:
    peaks = []
    n = flux.size
    for k in range(n):
        lo, hi = max(0, k - max_w), min(n, k + max_w + 1)
        if flux[k] < flux[lo:hi].max() or flux[k] <= 0:
            continue
        # plateaus: keep only the first frame
        if peaks and peaks[-1] >= k - max_w and flux[peaks[-1]] == flux[k]:
            continue
        m_lo, m_hi = max(0, k - mean_w), min(n, k + mean_w + 1)
        if flux[k] >= flux[m_lo:m_hi].mean() + threshold:
            peaks.append(k)
    return peaks


def _onset_pitches(newness: np.ndarray, max_pitches: int = 4, rel: float = 0.2) -> tuple[int, ...]:
    top = newness.max()
    if top <= 0:
        return ()
    cand = []
    for b in range(N_BANDS):
        v = newness[b]
        if v < rel * top:
            continue
        left = newness[b - 1] if b > 0 else -np.inf
        right = newness[b + 1] if b < N_BANDS - 1 else -np.inf
        if v >= left and v > right:
            cand.append((-v, b))
    cand.sort()
    return tuple(sorted(b + LOWEST_MIDI for _, b in cand[:max_pitches]))


def events_from_audio(
    samples: np.ndarray,
    params: AudioParams = AudioParams(),
    sample_rate: int | None = None,
) -> Iterator[NoteEvent]:
    """Deterministic onset/pitch transcription of a mono signal.

    Onsets are spectral-flux peaks that are the maximum within +-3 frames and
    exceed the +-10 frame local mean by ``onset_threshold``. Pitches are read
    from the energy that appeared across the onset (two frames after minus
    one frame before): up to four bands that are local maxima along pitch and
    reach 20% of the strongest band.
    """
    x = _check_audio(samples, params, sample_rate)
    times, bands = _band_spectrogram(x, params)
    flux = spectral_flux(bands)
    n = len(bands)
    # frames whose short window runs past the last sample see the cut, not a note
    last_whole = (x.size - params.fft_size // 2) // params.hop
    for k in pick_onsets(flux, params.onset_threshold):
        if k > last_whole:
            continue
        after = bands[min(k + 2, n - 1)]
        before = bands[max(k - 1, 0)]
        pitches = _onset_pitches(np.maximum(after - before, 0.0))
        if pitches:
            yield NoteEvent(float(times[k]), pitches)


# symbolic route ------------------------------------------------------------


def harmonic_pattern(pitches: Iterable[int]) -> np.ndarray:
    v = np.zeros(N_BANDS)
    for p in pitches:
        for offset, w in HARMONICS:
            b = p + offset - LOWEST_MIDI
            if 0 <= b < N_BANDS:
                v[b] += w
    return v


class EventFramer:
    """Causal, incremental events -> frames conversion.

    Frame ``k`` sits at ``t_k = k / frame_rate`` and holds, for every event
    with ``t_event <= t_k``, its harmonic pattern scaled by
    ``exp(-(t_k - t_event) / tau)``. A frame is emitted as soon as it is
    final, i.e. once an event later than ``t_k`` has been pushed, or on
    :meth:`finish`.
    """

    def __init__(self, frame_rate: float = FRAME_RATE, tau: float = DECAY_TAU_S):
        self.frame_rate = frame_rate
        self.tau = tau
        self._decay = math.exp(-1.0 / (frame_rate * tau))
        self._state = np.zeros(N_BANDS)
        self._k = 0  # next frame index to emit
        self._pending: list[NoteEvent] = []
        self._last_t = -math.inf

    def push(self, event: NoteEvent) -> list[FeatureFrame]:
        if event.t < self._last_t:
            raise StreamOrderError(f"event at {event.t} s precedes {self._last_t} s")
        self._last_t = event.t
        out = self._emit_before(event.t)
        self._pending.append(event)
        return out

    def advance(self, t: float) -> list[FeatureFrame]:
        """Emit frames strictly before ``t`` (no event earlier than ``t`` will follow)."""
        self._last_t = max(self._last_t, t)
        return self._emit_before(t)

    def finish(self, until: float) -> list[FeatureFrame]:
        """Emit every remaining frame with ``t_k <= until``."""
        return self._emit_before(until, inclusive=True)

    @property
    def next_frame_time(self) -> float:
        return self._k / self.frame_rate

    def _emit_before(self, t: float, inclusive: bool = False) -> list[FeatureFrame]:
        out = []
        while True:
            tk = self._k / self.frame_rate
            if tk > t or (tk == t and not inclusive):
                break
            out.append(FeatureFrame(tk, self._frame(tk)))
            self._k += 1
        return out

    def _frame(self, tk: float) -> np.ndarray:
        self._state *= self._decay
        if self._pending:
            keep = []
            for e in self._pending:
                if e.t <= tk:
                    self._state += harmonic_pattern(e.pitches) * math.exp(-(tk - e.t) / self.tau)
                else:
                    keep.append(e)
            self._pending = keep
        norm = np.linalg.norm(self._state)
        return self._state / norm if norm > 0 else np.zeros(N_BANDS)


def events_to_frames(
    events: Sequence[NoteEvent],
    frame_rate: float = FRAME_RATE,
    duration: float | None = None,
    tail_s: float = RENDER_TAIL_S,
) -> list[FeatureFrame]:
    """Frames on the grid ``k / frame_rate`` up to ``duration`` seconds.

    ``duration`` defaults to the last event time plus ``tail_s``.
    """
    if duration is None:
        duration = (events[-1].t if events else 0.0) + tail_s
    framer = EventFramer(frame_rate)
    frames: list[FeatureFrame] = []
    for e in events:
        frames.extend(f for f in framer.push(e) if f.t <= duration)
    frames.extend(framer.finish(duration))
    return frames


def frames_to_matrix(frames: Sequence[FeatureFrame]) -> np.ndarray:
    if not frames:
        return np.zeros((0, N_BANDS))
    return np.stack([f.v for f in frames])


def score_events(score: Score) -> list[NoteEvent]:
    """The score as a nominal-tempo event stream (chords share one event)."""
    spb = 60.0 / score.nominal_bpm
    return merge_chords([(n.onset * spb, n.pitch) for n in score.notes], 1e-9)


def render_duration(score: Score) -> float:
    """Rendered length: last note end plus the longer of 2 s and 4 beats."""
    return beat_to_seconds(score, score.end_beat) + max(
        RENDER_TAIL_S, beat_to_seconds(score, RENDER_TAIL_BEATS)
    )


def render_score(score: Score, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """Reference frames of ``score`` as an ``(n_frames, 88)`` matrix."""
    frames = events_to_frames(score_events(score), frame_rate, duration=render_duration(score))
    return frames_to_matrix(frames)
