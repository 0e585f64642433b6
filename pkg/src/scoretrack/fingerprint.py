"""Tempo-invariant symbolic fingerprinting.

Tokens hash a triple of note entries ``a < b < c`` (strictly increasing
times) by their three pitches and the quantised ratio of the two
inter-onset intervals ``(t_c - t_b) / (t_b - t_a)``. Pairing is by entry
count, not by time window: for each anchor ``a`` the ``b`` candidates are
the next ``FANOUT_B`` entries later than ``a``, and for each ``b`` the ``c``
candidates are the next ``FANOUT_C`` entries later than ``b``. Scaling all
times by a constant therefore leaves the token list unchanged.

A key packs as ``p_a << 20 | p_b << 13 | p_c << 6 | bucket`` (27 bits).

Index file layout (all integers little-endian)::

    offset  size        field
    0       5           magic b"SPFP1"
    5       2  u16      format version (1)
    7       1  u8       FANOUT_B used at build time
    8       1  u8       FANOUT_C used at build time
    9       4  u32      n_scores
            per score, in ascending id order:
              4  u32    byte length L of the score document
              L         UTF-8 JSON score document (see scoretrack.score)
            8  u64      n_keys (distinct tokens)
            8  u64      n_postings
            4*n_keys    u32 keys, ascending
            8*(n_keys+1) u64 posting offsets; postings of key k are
                        [offsets[k], offsets[k+1])
            2*n_post    u16 score index (position in the score table)
            4*n_post    u32 anchor entry index
            8*n_post    f64 anchor beat
            8*n_post    f64 reference a->b span in beats
    end-4   4  u32      CRC-32 (zlib) of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IndexFormatError
from .score import Score, ScoreDatabase
from .sim import NoteEvent

FANOUT_B = 5
FANOUT_C = 5
N_BUCKETS = 64
MIN_TDR = 2.0 ** -4
MAX_TDR = 2.0 ** 4
# slack absorbing float rounding exactly at bucket edges (ratios 1, 2, 1/2 ...)
BUCKET_EPS = 1e-9

QUERY_WINDOW = 20
MIN_STRENGTH = 8
MIN_COVERAGE = 0.25
MAX_HYPOTHESES = 5
BUCKET_TOLERANCE = 1
CHORD_TOL_S = 0.05
TEMPO_RANGE = (0.25, 4.0)

MAGIC = b"SPFP1"
VERSION = 1


@dataclass(frozen=True)
class FingerprintToken:
    p_a: int
    p_b: int
    p_c: int
    r_bucket: int

    def pack(self) -> int:
        return (self.p_a << 20) | (self.p_b << 13) | (self.p_c << 6) | self.r_bucket

    @classmethod
    def unpack(cls, key: int) -> "FingerprintToken":
        return cls((key >> 20) & 0x7F, (key >> 13) & 0x7F, (key >> 6) & 0x7F, key & 0x3F)


def ratio_bucket(tdr):
    """Quantise interval ratios onto 64 log2 buckets spanning [2^-4, 2^4]."""
    q = np.floor((np.log2(tdr) + 4.0) * 8.0 + BUCKET_EPS)
    return np.clip(q, 0, N_BUCKETS - 1).astype(np.int64)


@dataclass
class TokenArrays:
    keys: np.ndarray  # int64 packed tokens
    a: np.ndarray  # entry indices
    b: np.ndarray
    c: np.ndarray


def token_arrays(
    t: np.ndarray, pitch: np.ndarray, fanout_b: int = FANOUT_B, fanout_c: int = FANOUT_C
) -> TokenArrays:
    """Vectorised token construction over entries sorted by (t, pitch)."""
    n = len(t)
    empty = np.zeros(0, dtype=np.int64)
    if n < 3:
        return TokenArrays(empty, empty, empty, empty)
    t = np.asarray(t, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.int64)
    nxt = np.searchsorted(t, t, side="right")
    a = np.repeat(np.arange(n), fanout_b)
    b = nxt[a] + np.tile(np.arange(fanout_b), n)
    ok = b < n
    a, b = a[ok], b[ok]
    a = np.repeat(a, fanout_c)
    b = np.repeat(b, fanout_c)
    c = nxt[b] + np.tile(np.arange(fanout_c), len(b) // fanout_c)
    ok = c < n
    a, b, c = a[ok], b[ok], c[ok]
    tdr = (t[c] - t[b]) / (t[b] - t[a])
    ok = (tdr >= MIN_TDR) & (tdr <= MAX_TDR)
    a, b, c, tdr = a[ok], b[ok], c[ok], tdr[ok]
    keys = (pitch[a] << 20) | (pitch[b] << 13) | (pitch[c] << 6) | ratio_bucket(tdr)
    return TokenArrays(keys.astype(np.int64), a, b, c)


def entries_from_events(events: Sequence[NoteEvent]) -> tuple[np.ndarray, np.ndarray]:
    """Expand chords to one (t, pitch) entry per pitch, sorted by (t, pitch)."""
    pairs = sorted((e.t, p) for e in events for p in e.pitches)
    if not pairs:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    t, p = zip(*pairs)
    return np.array(t, dtype=np.float64), np.array(p, dtype=np.int64)


def tokens_from_events(events: Sequence[tuple[float, int]]) -> list[tuple[FingerprintToken, int]]:
    """Tokens of a sorted (t, pitch) list, each with its anchor index."""
    pairs = sorted((float(t), int(p)) for t, p in events)
    if len(pairs) < 3:
        return []
    t = np.array([x for x, _ in pairs])
    p = np.array([y for _, y in pairs])
    ta = token_arrays(t, p)
    return [(FingerprintToken.unpack(int(k)), int(a)) for k, a in zip(ta.keys, ta.a)]


def cluster_onsets(events: Sequence[NoteEvent], tol: float = CHORD_TOL_S) -> list[NoteEvent]:
    """Re-merge chords that performance jitter split into separate events.

    A cluster starts at an event and absorbs followers less than ``tol``
    seconds after that first event; it is stamped with the mean member time.
    """
    out: list[NoteEvent] = []
    members: list[NoteEvent] = []
    for e in events:
        if members and e.t - members[0].t >= tol:
            out.append(_fuse(members))
            members = []
        members.append(e)
    if members:
        out.append(_fuse(members))
    return out


def _fuse(members: list[NoteEvent]) -> NoteEvent:
    if len(members) == 1:
        return members[0]
    t = sum(m.t for m in members) / len(members)
    pitches = sorted({p for m in members for p in m.pitches})
    return NoteEvent(t, tuple(pitches))


@dataclass(frozen=True)
class Hypothesis:
    score_id: str
    beat: float
    tempo_factor: float
    strength: int
    coverage: float
    # earliest performance time among the bin's matched anchors
    evidence_start: float = 0.0


class FingerprintIndex:
    """Immutable token -> postings map over a score database."""

    def __init__(
        self,
        db: ScoreDatabase,
        keys: np.ndarray,
        offsets: np.ndarray,
        score_idx: np.ndarray,
        anchor_index: np.ndarray,
        anchor_beat: np.ndarray,
        ref_span: np.ndarray,
        fanout_b: int = FANOUT_B,
        fanout_c: int = FANOUT_C,
    ):
        self.db = db
        self.score_ids = db.ids
        self.keys = keys
        self.offsets = offsets
        self.score_idx = score_idx
        self.anchor_index = anchor_index
        self.anchor_beat = anchor_beat
        self.ref_span = ref_span
        self.fanout_b = fanout_b
        self.fanout_c = fanout_c
        self._spb = np.array([db[s].seconds_per_beat for s in self.score_ids])
        self._end = np.array([db[s].end_beat for s in self.score_ids])

    @property
    def n_tokens(self) -> int:
        return int(self.keys.size)

    @property
    def n_postings(self) -> int:
        return int(self.score_idx.size)

    def postings(self, token: FingerprintToken | int) -> list[tuple[str, int, float, float]]:
        key = token.pack() if isinstance(token, FingerprintToken) else int(token)
        k = int(np.searchsorted(self.keys, key))
        if k == self.keys.size or self.keys[k] != key:
            return []
        lo, hi = int(self.offsets[k]), int(self.offsets[k + 1])
        return [
            (self.score_ids[self.score_idx[i]], int(self.anchor_index[i]),
             float(self.anchor_beat[i]), float(self.ref_span[i]))
            for i in range(lo, hi)
        ]

    # persistence -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HBBI", VERSION, self.fanout_b, self.fanout_c, len(self.score_ids))]
        for sid in self.score_ids:
            doc = json.dumps(self.db[sid].to_dict(), separators=(",", ":")).encode("utf-8")
            parts.append(struct.pack("<I", len(doc)))
            parts.append(doc)
        parts.append(struct.pack("<QQ", self.keys.size, self.score_idx.size))
        parts.append(self.keys.astype("<u4").tobytes())
        parts.append(self.offsets.astype("<u8").tobytes())
        parts.append(self.score_idx.astype("<u2").tobytes())
        parts.append(self.anchor_index.astype("<u4").tobytes())
        parts.append(self.anchor_beat.astype("<f8").tobytes())
        parts.append(self.ref_span.astype("<f8").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    def save(self, path) -> int:
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return len(data)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FingerprintIndex":
        if len(data) < 17 or data[:5] != MAGIC:
            raise IndexFormatError("not a fingerprint index (bad magic)")
        (crc,) = struct.unpack("<I", data[-4:])
        if zlib.crc32(data[:-4]) != crc:
            raise IndexFormatError("index checksum mismatch")
        version, fb, fc, n_scores = struct.unpack_from("<HBBI", data, 5)
        if version != VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        pos = 5 + struct.calcsize("<HBBI")
        scores = []
        try:
            for _ in range(n_scores):
                (length,) = struct.unpack_from("<I", data, pos)
                pos += 4
                scores.append(Score.from_dict(json.loads(data[pos:pos + length].decode("utf-8"))))
                pos += length
            n_keys, n_post = struct.unpack_from("<QQ", data, pos)
            pos += 16

            def take(dtype, count):
                nonlocal pos
                arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
                pos += arr.nbytes
                return arr

            keys = take("<u4", n_keys).astype(np.int64)
            offsets = take("<u8", n_keys + 1).astype(np.int64)
            score_idx = take("<u2", n_post).astype(np.int64)
            anchor_index = take("<u4", n_post).astype(np.int64)
            anchor_beat = take("<f8", n_post).astype(np.float64)
            ref_span = take("<f8", n_post).astype(np.float64)
        except (struct.error, ValueError) as exc:
            raise IndexFormatError(f"truncated or malformed index: {exc}") from None
        if pos != len(data) - 4:
            raise IndexFormatError("trailing bytes after postings")
        db = ScoreDatabase.from_scores(scores)
        return cls(db, keys, offsets, score_idx, anchor_index, anchor_beat, ref_span, fb, fc)

    @classmethod
    def load(cls, path) -> "FingerprintIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    # querying --------------------------------------------------------------

    def query(
        self,
        recent_events: Sequence[NoteEvent],
        t_now: float,
        *,
        min_strength: int = MIN_STRENGTH,
        min_coverage: float = MIN_COVERAGE,
        max_hypotheses: int = MAX_HYPOTHESES,
        bucket_tolerance: int = BUCKET_TOLERANCE,
        chord_tol: float = CHORD_TOL_S,
    ) -> list[Hypothesis]:
        events = cluster_onsets(recent_events, chord_tol) if chord_tol > 0 else list(recent_events)
        t, p = entries_from_events(events)
        qt = token_arrays(t, p, self.fanout_b, self.fanout_c)
        n_query = qt.keys.size
        if n_query == 0:
            return []
        m = self.match(qt, t, bucket_tolerance)
        bins = vote(m, t_now, self._spb)
        hyps = []
        for (s, beat_bin), b in bins.items():
            cov = b.strength / n_query
            if b.strength < min_strength or cov < min_coverage:
                continue
            beat = min(max(b.beat, 0.0), float(self._end[s]))
            hyps.append(
                Hypothesis(
                    score_id=self.score_ids[s],
                    beat=beat,
                    tempo_factor=b.tempo,
                    strength=b.strength,
                    coverage=cov,
                    evidence_start=b.evidence_start,
                )
            )
        hyps.sort(key=lambda h: (-h.strength, h.score_id, h.beat))
        return hyps[:max_hypotheses]

    def match(self, qt: TokenArrays, t: np.ndarray, bucket_tolerance: int = BUCKET_TOLERANCE) -> "Matches":
        """All (query token, posting) pairs whose keys agree up to bucket slack."""
        base = qt.keys & ~0x3F
        bucket = qt.keys & 0x3F
        q_ids, lookups = [], []
        for d in range(-bucket_tolerance, bucket_tolerance + 1):
            bb = bucket + d
            ok = (bb >= 0) & (bb < N_BUCKETS)
            q_ids.append(np.nonzero(ok)[0])
            lookups.append(base[ok] | bb[ok])
        q_ids = np.concatenate(q_ids)
        lookups = np.concatenate(lookups)
        k = np.searchsorted(self.keys, lookups)
        k_clip = np.minimum(k, self.keys.size - 1)
        hit = (k < self.keys.size) & (self.keys[k_clip] == lookups)
        q_ids, k = q_ids[hit], k[hit]
        lo, hi = self.offsets[k], self.offsets[k + 1]
        counts = hi - lo
        total = int(counts.sum())
        q_rep = np.repeat(q_ids, counts)
        # posting indices: lo repeated plus a running offset within each range
        starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
        post = starts + np.arange(total)
        qa, qb = qt.a[q_rep], qt.b[q_rep]
        return Matches(
            query_token=q_rep,
            score_idx=self.score_idx[post],
            anchor_beat=self.anchor_beat[post],
            ref_span=self.ref_span[post],
            t_anchor=t[qa],
            perf_span=t[qb] - t[qa],
        )


@dataclass
class Matches:
    query_token: np.ndarray
    score_idx: np.ndarray
    anchor_beat: np.ndarray
    ref_span: np.ndarray
    t_anchor: np.ndarray
    perf_span: np.ndarray

    def __len__(self) -> int:
        return int(self.query_token.size)


@dataclass
class Bin:
    strength: int
    tempo: float
    beat: float
    evidence_start: float


def vote(m: Matches, t_now: float, spb: np.ndarray) -> dict[tuple[int, int], Bin]:
    """Histogram of projected current positions, keyed by (score, beat bin).

    Each match estimates the tempo factor from its a->b spans. A per-score
    median of those estimates projects every anchor to ``t_now``; matches are
    binned by the floor of the projected beat, and each query token votes at
    most once per bin. Inside a bin the tempo is re-estimated as the median
    over its matches and the reported beat is the median re-projection.
    """
    if len(m) == 0:
        return {}
    tempo = m.perf_span / (m.ref_span * spb[m.score_idx])
    ok = (tempo >= TEMPO_RANGE[0]) & (tempo <= TEMPO_RANGE[1])
    sidx = m.score_idx[ok]
    tempo = tempo[ok]
    ab, ta, qtok = m.anchor_beat[ok], m.t_anchor[ok], m.query_token[ok]
    if sidx.size == 0:
        return {}
    order = np.lexsort((tempo, sidx))
    sidx, tempo, ab, ta, qtok = sidx[order], tempo[order], ab[order], ta[order], qtok[order]
    uniq, first = np.unique(sidx, return_index=True)
    bounds = list(first) + [sidx.size]
    score_tempo = np.empty(sidx.size)
    for s, lo, hi in zip(uniq, bounds, bounds[1:]):
        score_tempo[lo:hi] = np.median(tempo[lo:hi])
    dt = t_now - ta
    proj = ab + dt / (score_tempo * spb[sidx])
    beat_bin = np.floor(proj).astype(np.int64)

    order = np.lexsort((qtok, beat_bin, sidx))
    sidx, beat_bin, tempo, ab, ta, qtok = (
        sidx[order], beat_bin[order], tempo[order], ab[order], ta[order], qtok[order]
    )
    edge = np.ones(sidx.size, dtype=bool)
    edge[1:] = (sidx[1:] != sidx[:-1]) | (beat_bin[1:] != beat_bin[:-1])
    starts = np.nonzero(edge)[0]
    ends = np.append(starts[1:], sidx.size)
    out: dict[tuple[int, int], Bin] = {}
    for lo, hi in zip(starts, ends):
        q = qtok[lo:hi]
        strength = 1 + int(np.count_nonzero(q[1:] != q[:-1]))
        s = int(sidx[lo])
        tf = float(np.median(tempo[lo:hi]))
        beats = ab[lo:hi] + (t_now - ta[lo:hi]) / (tf * spb[s])
        out[(s, int(beat_bin[lo]))] = Bin(strength, tf, float(np.median(beats)), float(ta[lo:hi].min()))
    return out


def score_entries(score: Score) -> tuple[np.ndarray, np.ndarray]:
    """Entries of a score in beats; notes are already (onset, pitch) sorted."""
    return score.onsets, score.pitches


def build_index(db: ScoreDatabase, fanout_b: int = FANOUT_B, fanout_c: int = FANOUT_C) -> FingerprintIndex:
    keys, sidx, aidx, abeat, span = [], [], [], [], []
    for s, sid in enumerate(db.ids):
        t, p = score_entries(db[sid])
        ta = token_arrays(t, p, fanout_b, fanout_c)
        keys.append(ta.keys)
        sidx.append(np.full(ta.keys.size, s, dtype=np.int64))
        aidx.append(ta.a)
        abeat.append(t[ta.a])
        span.append(t[ta.b] - t[ta.a])
    keys = np.concatenate(keys)
    sidx = np.concatenate(sidx)
    aidx = np.concatenate(aidx)
    abeat = np.concatenate(abeat)
    span = np.concatenate(span)
    order = np.lexsort((span, aidx, abeat, sidx, keys))
    keys, sidx, aidx, abeat, span = keys[order], sidx[order], aidx[order], abeat[order], span[order]
    uniq, first = np.unique(keys, return_index=True)
    offsets = np.append(first, keys.size).astype(np.int64)
    return FingerprintIndex(db, uniq.astype(np.int64), offsets, sidx, aidx, abeat, span, fanout_b, fanout_c)
