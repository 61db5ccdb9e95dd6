"""SVG heatmaps of decision tables over the ``(t, W)`` grid."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import Scenario
from .dp import HeatmapTables


def heatmap_svg(tables: HeatmapTables, scenario: Scenario, path: str | Path, title: str = "", w_max: float | None = None) -> Path:
    """Portfolio choice as colour, goal-taking nodes as dots.

    The remaining-goal-cost line and the cumulative-infusion line are drawn
    and clipped to the wealth axis, whose top defaults to three times the
    larger of initial wealth and total infusions.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "gbwm"
    T = scenario.T
    w_max = w_max or 3.0 * max(scenario.W0, float(np.sum(scenario.infusion_array)))
    wealth = tables.table("wealth", T)
    port = tables.table("portfolio", T)
    goal = tables.table("goal_index", T)

    fig, ax = plt.subplots(figsize=(8, 5))
    cmap = plt.get_cmap("viridis", scenario.P)
    for t in range(T + 1):
        w = wealth[t]
        keep = w <= w_max * 1.05
        w, p, g = w[keep], port[t][keep], goal[t][keep]
        if len(w) == 0:
            continue
        # the grid stops where every remaining goal is surely funded; the
        # top cell stands for all wealth above it
        edges = np.concatenate([[w[0]], 0.5 * (w[1:] + w[:-1]), [max(w[-1], w_max)]])
        ax.pcolormesh([t - 0.5, t + 0.5], edges, p[:, None], cmap=cmap, vmin=-0.5, vmax=scenario.P - 0.5, shading="flat")
        taken = g > 0
        if taken.any() and scenario.combinations[t] is not None:
            ax.plot(np.full(taken.sum(), t), w[taken], ".", color="white", markersize=1.5)
    ts = np.arange(T + 1)
    ax.plot(ts, tables.remaining_cost, color="red", lw=1.2, label="remaining goal cost")
    ax.plot(ts, tables.cumulative_infusions, color="orange", lw=1.2, ls="--", label="cumulative infusions")
    ax.set_xlim(-0.5, T + 0.5)
    ax.set_ylim(0, w_max)
    ax.set_xlabel("t (years)")
    ax.set_ylabel("wealth")
    ax.set_title(title)
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=matplotlib.colors.Normalize(-0.5, scenario.P - 0.5))
    fig.colorbar(sm, ax=ax, label="portfolio")
    ax.legend(loc="upper left", fontsize=8)
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
