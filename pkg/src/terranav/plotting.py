"""Overhead plots of trajectories over a height-coloured map."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import terrain_for  # noqa: E402

VARIANT_COLORS = {"st": "tab:blue", "sr": "tab:red"}


def _height_axes(spec, ax, resolution=0.05):
    grid = terrain_for(spec, resolution)
    x0, x1, y0, y1 = grid.extent
    im = ax.imshow(np.ma.masked_invalid(grid.heights.T), origin="lower", extent=(x0, x1, y0, y1),
                   cmap="terrain", interpolation="nearest")
    ax.set_xlabel("x, m")
    ax.set_ylabel("y, m")
    ax.set_aspect("equal")
    return im


def plot_trajectories(spec, reports, path, title=None):
    """One line per task trajectory; in SVG output each line is a group whose
    id is ``traj-<variant>-<index>``."""
    fig, ax = plt.subplots(figsize=(7, 6))
    im = _height_axes(spec, ax)
    fig.colorbar(im, ax=ax, label="height, m")
    for r in reports:
        color = VARIANT_COLORS.get(r.variant, "k")
        first = True
        for t in r.tasks:
            if t.trajectory is None:
                continue
            xy = np.asarray(t.trajectory)
            line, = ax.plot(xy[:, 0], xy[:, 1], color=color, lw=0.8, alpha=0.7,
                            label=r.variant.upper() if first else None)
            line.set_gid(f"traj-{r.variant}-{t.index}")
            first = False
            ax.plot(*t.goal[:2], marker="x", color=color, ms=3, alpha=0.5)
    if any(r.tasks for r in reports):
        ax.legend(loc="upper right")
    ax.set_title(title or (reports[0].map_name if reports else ""))
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_episode(spec, result, path, route=None, title=None):
    """Single episode trajectory, optionally with its route waypoints."""
    fig, ax = plt.subplots(figsize=(7, 6))
    im = _height_axes(spec, ax)
    fig.colorbar(im, ax=ax, label="height, m")
    xy = result.trajectory[:, :2]
    line, = ax.plot(xy[:, 0], xy[:, 1], color="tab:red", lw=1.2)
    line.set_gid("traj-episode-0")
    if route:
        r = np.asarray(route)[:, :2]
        ax.plot(r[:, 0], r[:, 1], "k--", lw=0.8, marker="o", ms=3)
    ax.set_title(title or f"{result.label or 'episode'}: {result.outcome}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_map(spec, path, title=None):
    fig, ax = plt.subplots(figsize=(7, 6))
    im = _height_axes(spec, ax)
    fig.colorbar(im, ax=ax, label="height, m")
    ax.set_title(title or type(spec).__name__)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
