"""Deterministic SVG figures of predicted vs reference heart rate."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

BAND_BPM = 6.0

golden = (math.sqrt(5) - 1.0) / 2.0
RC = {
    "svg.hashsalt": "bgrppg",
    "svg.fonttype": "none",     # keep text as text; no embedded glyph paths
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    "figure.figsize": (6.0, 6.0 * golden),
}


def plot_hr(rows, path, title="", band=BAND_BPM):
    """Per-clip reference HR with a +-band area and the predictions on top.

    Clips are sorted by reference HR so the band reads as a ribbon.
    """
    rows = sorted(rows, key=lambda r: (r["hr_gt"], r["clip_id"]))
    gt = np.array([r["hr_gt"] for r in rows])
    pred = np.array([r["hr_pred"] for r in rows])
    x = np.arange(len(rows))
    within = np.abs(pred - gt) <= band
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.fill_between(x, gt - band, gt + band, color="0.85", lw=0,
                        label=f"reference ±{band:g} bpm")
        ax.plot(x, gt, color="0.3", label="reference")
        ax.plot(x, pred, color="tab:blue", lw=0.8, alpha=0.6)
        ax.scatter(x[within], pred[within], s=10, color="tab:blue", zorder=3, label="predicted")
        if np.any(~within):
            ax.scatter(x[~within], pred[~within], s=12, marker="x", color="tab:red", zorder=3,
                       label=f"predicted, off by >{band:g} bpm")
        ax.set_xlabel("clip (sorted by reference HR)")
        ax.set_ylabel("heart rate [bpm]")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, loc="upper left")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
