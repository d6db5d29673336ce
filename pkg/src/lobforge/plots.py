"""Static SVG figures: PnL curves with the log-growth fit and correlation heat maps.

Output is byte-stable: the SVG id salt is fixed and no date is written.
Provenance goes into the SVG ``<metadata>`` description.
"""
from __future__ import annotations

import json

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lobforge"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path, provenance):
    meta = {"Date": None, "Creator": "lobforge"}
    if provenance is not None:
        meta["Description"] = json.dumps(provenance, sort_keys=True)
    fig.savefig(path, format="svg", metadata=meta)


def pnl_curve_svg(equity, path, fit=None, title: str = "Equity", provenance: dict | None = None) -> None:
    """Equity by step, with ``fit`` (a LogGrowthFit) overlaid when given."""
    plt = _pyplot()
    y = np.asarray(equity, dtype=np.float64)
    steps = np.arange(1, y.size + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, y, lw=1.0, label="equity")
    if fit is not None:
        ax.plot(steps, fit(steps), lw=1.0, ls="--",
                label=f"{fit.bias:.2f} + {fit.velocity_bps:.2f}e-4 ln(t)")
    ax.set_xlabel("step")
    ax.set_ylabel("USD")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    _save(fig, path, provenance)
    plt.close(fig)


def heatmap_svg(labels, matrix, path, title: str = "Correlation of volume changes",
                provenance: dict | None = None) -> None:
    plt = _pyplot()
    m = np.asarray(matrix, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * len(labels), 1.0 + 0.6 * len(labels)))
    im = ax.imshow(m, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(labels)), labels, rotation=90)
    ax.set_yticks(range(len(labels)), labels)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path, provenance)
    plt.close(fig)
