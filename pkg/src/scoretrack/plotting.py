"""Figures for evaluation reports (written to files, never shown)."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport, GroundTruth  # noqa: E402
from .tracker import TrackerOutput  # noqa: E402


def plot_tracking(
    outputs: Sequence[TrackerOutput],
    truth: GroundTruth,
    path,
    jumps: Sequence[float] = (),
    report: EvalReport | None = None,
    dpi: int = 100,
) -> None:
    """Tracked beat against the true beat over performance time.

    Outputs on the expected piece are drawn in one color, outputs on any other
    piece in another; jump instants are dashed vertical lines.
    """
    fig, ax = plt.subplots(figsize=(10, 4.5))
    for k, (sid, t, b) in enumerate(truth.segments):
        ax.plot(t, b, color="0.6", lw=2.5, label="truth" if k == 0 else None)
    if outputs:
        ok = [o for o in outputs if o.score_id == truth.expected_score(o.t_perf)]
        bad = [o for o in outputs if o.score_id != truth.expected_score(o.t_perf)]
        if ok:
            ax.scatter([o.t_perf for o in ok], [o.beat for o in ok], s=2, color="tab:blue", label="tracked")
        if bad:
            ax.scatter([o.t_perf for o in bad], [o.beat for o in bad], s=2, color="tab:red", label="wrong piece")
    for k, j in enumerate(jumps):
        ax.axvline(j, color="k", ls="--", lw=0.8, label="jump" if k == 0 else None)
    ax.set_xlabel("performance time (s)")
    ax.set_ylabel("score position (beats)")
    if report is not None:
        med = report.align_err_median_ms
        title = f"ident latency {report.ident_latency_s:.2f} s"
        if med is not None:
            title += f", median error {med:.0f} ms"
        ax.set_title(title)
    ax.legend(loc="upper left", markerscale=4, fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
