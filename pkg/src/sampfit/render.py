"""PNG output: density heatmaps over the world and hypothesis snapshots."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import GridDensity  # noqa: E402

CMAP = "viridis"


def _extent(g: GridDensity):
    x0, y0 = g.origin
    return (x0, x0 + g.width * g.cell[0], y0 + g.height * g.cell[1], y0)


def heatmap(path, g: GridDensity, title: str = "", points=None, gt: GridDensity | None = None,
            regions=None) -> None:
    """Predicted density (optionally next to the ground truth), y axis pointing down."""
    panels = [("prediction", g)] + ([("ground truth", gt)] if gt is not None else [])
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4), squeeze=False)
    for ax, (label, d) in zip(axes[0], panels):
        ax.imshow(d.mass, cmap=CMAP, extent=_extent(d), interpolation="nearest")
        if regions is not None:
            for x0, y0, x1, y1 in regions:
                ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ec="w", lw=0.5))
        if points is not None:
            p = np.asarray(points, dtype=float).reshape(-1, 2)
            ax.plot(p[:, 0], p[:, 1], "r+", ms=6)
        ax.set_title(label, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def snapshot(path, hypotheses, samples, title: str = "", init=None) -> None:
    """Free-hypothesis positions (black) over ground-truth samples (red)."""
    fig, ax = plt.subplots(figsize=(4, 4))
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    ax.plot(s[:, 0], s[:, 1], ".", color="tab:red", ms=2)
    if init is not None:
        i = np.asarray(init, dtype=float).reshape(-1, 2)
        ax.plot(i[:, 0], i[:, 1], "x", color="0.6", ms=4)
    h = np.asarray(hypotheses, dtype=float).reshape(-1, 2)
    ax.plot(h[:, 0], h[:, 1], "o", color="k", ms=4)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
