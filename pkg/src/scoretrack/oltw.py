"""Online dynamic time warping against a fixed reference.

Rows of the cost matrix are reference (score) frames ``i``; columns are live
performance frames ``j``. Every :meth:`Oltw.step` appends one column and then
grows the reference side while the cheapest cell on the search frontier (the
newest column together with the newest row) sits on the newest row, with
``max_run_count`` limiting consecutive growth in one direction.

Only the newest column and the newest row of cumulative costs are kept, each
at most ``window_c`` cells long, so a step costs O(window_c) and memory does
not depend on stream length. Both recurrences are evaluated with a prefix
minimum: along a line with local costs ``d`` and best entries ``a`` from the
previous line, ``D[k] = S[k] + min_{m<=k}(a[m] - S[m])`` where ``S`` is the
running sum of ``d``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ReferenceExhausted

_INF = np.inf


@dataclass(frozen=True)
class OltwParams:
    window_c: int = 250
    max_run_count: int = 3
    # tie-breaker added to horizontal and vertical moves; rendered features are
    # constant between onsets, so without it paths through a stretch all tie
    straight_penalty: float = 1e-3
    # frames of reported-path cost averaged into normalized_cost; 0 = whole path
    cost_horizon: int = 100

    def __post_init__(self):
        if self.window_c < 2:
            raise ValueError("window_c must be >= 2")
        if self.max_run_count < 1:
            raise ValueError("max_run_count must be >= 1")
        if self.straight_penalty < 0 or self.cost_horizon < 0:
            raise ValueError("straight_penalty and cost_horizon must be >= 0")


def cosine_distances(rows: np.ndarray, row_zero: np.ndarray, v: np.ndarray, v_zero: bool) -> np.ndarray:
    """``1 - cos`` for unit (or zero) vectors; any zero vector gives 1."""
    if v_zero:
        return np.ones(rows.shape[0])
    d = 1.0 - rows @ v
    np.maximum(d, 0.0, out=d)
    d[row_zero] = 1.0
    return d


def _prefix_min_scan(a: np.ndarray, d: np.ndarray, step: np.ndarray | float) -> np.ndarray:
    # D[k] = min(a[k], D[k-1] + d[k] + step)
    s = np.cumsum(d + step)
    return s + np.minimum.accumulate(a - s)


class Oltw:
    """One online aligner instance; steps must be serialized."""

    def __init__(self, ref: np.ndarray, start_frame: int = 0, params: OltwParams = OltwParams()):
        ref = np.asarray(ref, dtype=np.float64)
        if ref.ndim != 2 or ref.shape[0] == 0:
            raise ValueError("reference must be a non-empty (n_frames, n_bands) matrix")
        if not 0 <= start_frame < ref.shape[0]:
            raise IndexError(f"start_frame {start_frame} outside [0, {ref.shape[0]})")
        self.ref = ref
        self.ref_zero = ~np.any(ref != 0, axis=1)
        self.params = params
        self.start = start_frame
        self.i = start_frame  # newest reference row
        self.j = -1  # newest live column; -1 before the first step
        c = params.window_c
        self._live = np.zeros((c, ref.shape[1]))
        self._live_zero = np.ones(c, dtype=bool)
        self._col = np.zeros(0)  # D[col_lo..i, j]
        self._col_lo = start_frame
        self._row = np.zeros(0)  # D[i, row_lo..j]
        self._row_lo = 0
        self.run_count = 0
        self.last_dir: str | None = None
        self.reported = start_frame
        self._costs: deque[float] = deque(maxlen=params.cost_horizon or None)
        self.total_cost = 0.0
        self.steps = 0
        self.exhausted = False

    @property
    def path_len(self) -> int:
        return len(self._costs)

    @property
    def normalized_cost(self) -> float:
        return self.total_cost / len(self._costs) if self._costs else 0.0

    @property
    def n_ref(self) -> int:
        return self.ref.shape[0]

    # one column / one row ------------------------------------------------------

    def _add_column(self, v: np.ndarray, v_zero: bool) -> None:
        c = self.params.window_c
        pen = self.params.straight_penalty
        j = self.j + 1
        lo = max(self.start, self.i - c + 1)
        d = cosine_distances(self.ref[lo:self.i + 1], self.ref_zero[lo:self.i + 1], v, v_zero)
        n = d.size
        if j == 0:
            prev = np.full(n, _INF)
            diag = np.full(n, _INF)
            diag[0] = 0.0  # virtual origin just before (start, 0)
        else:
            prev = np.full(n, _INF)
            off = lo - self._col_lo
            known = self._col[off:]
            prev[: known.size] = known
            diag = np.empty(n)
            diag[0] = self._col[off - 1] if off > 0 else _INF
            diag[1:] = prev[:-1]
        a = d + np.minimum(prev + pen, diag)
        col = _prefix_min_scan(a, d, pen)
        self._col = col
        self._col_lo = lo
        self.j = j
        self._live[j % c] = v
        self._live_zero[j % c] = v_zero
        # newest row gains its cell in the new column
        row_lo = max(0, j - c + 1)
        if j == 0 or self._row.size == 0:
            self._row = col[-1:].copy()
            self._row_lo = j
        else:
            keep = self._row[max(0, row_lo - self._row_lo):]
            self._row = np.append(keep, col[-1])
            self._row_lo = max(row_lo, self._row_lo)
        self._bump("col")

    def _add_row(self) -> None:
        c = self.params.window_c
        pen = self.params.straight_penalty
        i = self.i + 1
        lo = max(0, self.j - c + 1)
        cols = np.arange(lo, self.j + 1)
        live = self._live[cols % c]
        live_zero = self._live_zero[cols % c]
        d = 1.0 - live @ self.ref[i]
        np.maximum(d, 0.0, out=d)
        if self.ref_zero[i]:
            d[:] = 1.0
        d[live_zero] = 1.0
        n = d.size
        prev = np.full(n, _INF)
        off = lo - self._row_lo
        known = self._row[max(off, 0):]
        prev[max(-off, 0): max(-off, 0) + known.size] = known
        diag = np.empty(n)
        diag[0] = self._row[off - 1] if off > 0 else _INF
        diag[1:] = prev[:-1]
        a = d + np.minimum(prev + pen, diag)
        row = _prefix_min_scan(a, d, pen)
        self._row = row
        self._row_lo = lo
        self.i = i
        col_lo = max(self.start, i - c + 1)
        keep = self._col[max(0, col_lo - self._col_lo):]
        self._col = np.append(keep, row[-1])
        self._col_lo = max(col_lo, self._col_lo)
        self._bump("row")

    def _bump(self, direction: str) -> None:
        if self.last_dir == direction:
            self.run_count += 1
        else:
            self.run_count = 1
            self.last_dir = direction

    def _frontier_argmin(self) -> tuple[int, int]:
        """(row, col) of the cheapest frontier cell; ties favour the column side."""
        kc = int(np.argmin(self._col))
        best_c = self._col[kc]
        kr = int(np.argmin(self._row))
        best_r = self._row[kr]
        if best_r < best_c:
            return self.i, self._row_lo + kr
        return self._col_lo + kc, self.j

    # public ----------------------------------------------------------------

    def step(self, v: np.ndarray) -> tuple[int, float]:
        """Consume one live frame; return (score frame, normalized cost)."""
        if self.exhausted:
            raise ReferenceExhausted("reference exhausted")
        v = np.asarray(v, dtype=np.float64)
        v_zero = not np.any(v != 0)
        self._add_column(v, v_zero)
        max_run = self.params.max_run_count
        while self.i < self.n_ref - 1:
            forced = self.last_dir == "col" and self.run_count > max_run
            if not forced:
                if self.last_dir == "row" and self.run_count >= max_run:
                    break
                x, y = self._frontier_argmin()
                if x < self.i:
                    break
            self._add_row()
            if forced or y == self.j:
                break
        k = int(np.argmin(self._col))
        pos = max(self.reported, self._col_lo + k)
        self.reported = pos
        cell = cosine_distances(self.ref[pos:pos + 1], self.ref_zero[pos:pos + 1], v, v_zero)[0]
        if self._costs.maxlen is not None and len(self._costs) == self._costs.maxlen:
            self.total_cost -= self._costs[0]
        self._costs.append(float(cell))
        self.total_cost += float(cell)
        if self.params.cost_horizon and self.steps % 1000 == 999:
            self.total_cost = float(sum(self._costs))  # drop accumulated rounding
        self.steps += 1
        if pos == self.n_ref - 1:
            self.exhausted = True
        return pos, self.normalized_cost


def oltw_start(ref: np.ndarray, start_frame: int = 0, params: OltwParams = OltwParams()) -> Oltw:
    return Oltw(ref, start_frame, params)


def oltw_step(state: Oltw, frame) -> tuple[int, float]:
    v = frame.v if hasattr(frame, "v") else frame
    return state.step(v)
