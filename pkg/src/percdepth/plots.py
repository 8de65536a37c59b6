"""Static output figures: loss curves and input/prediction/ground-truth grids."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)


def plot_losses(metrics_csv, out_path) -> Path | None:
    """Loss-curve PNG from a metrics CSV; no-op (with a warning) when the CSV
    holds no rows."""
    with open(metrics_csv, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        log.warning("metrics file %s has no rows; skipping loss plot", metrics_csv)
        return None
    steps = [int(r["step"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for col in ("r_cri_Y", "r_cri_X"):
        ax1.plot(steps, [float(r[col]) for r in rows], label=col)
    ax1.set_ylabel("critic risk")
    ax1.legend()
    for col in ("r_adv_Y", "r_adv_X", "r_rec"):
        ax2.plot(steps, [float(r[col]) for r in rows], label=col)
    ax2.set_xlabel("generator step")
    ax2.set_ylabel("generator risk")
    ax2.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def triptych_grid(triples: list, out_path, max_rows: int = 6) -> Path:
    """Grid of (rgb, predicted depth, ground truth depth) rows.

    Each tile is rendered at the image resolution, so the grid is exactly
    three tiles wide.
    """
    triples = triples[:max_rows]
    if not triples:
        raise ValueError("no evaluation pairs to plot")
    tile = triples[0][0].shape[0]
    grid = np.zeros((tile * len(triples), tile * 3, 3), dtype=np.float32)
    vmin = min(float(np.min(t[2])) for t in triples)
    vmax = max(float(np.max(t[2])) for t in triples)
    span = max(vmax - vmin, 1e-9)
    cmap = plt.get_cmap("viridis")
    for i, (rgb, pred, gt) in enumerate(triples):
        grid[i * tile : (i + 1) * tile, :tile] = np.clip(rgb / 255.0, 0, 1)
        for j, depth in enumerate((pred, gt), start=1):
            normed = np.clip((depth[..., 0] - vmin) / span, 0, 1)
            grid[i * tile : (i + 1) * tile, j * tile : (j + 1) * tile] = cmap(normed)[..., :3]
    out_path = Path(out_path)
    plt.imsave(out_path, grid)
    return out_path
