"""Heatmap rendering of monitoring episodes: PNG frames plus a GIF.

Each frame shows the penalty field (dark = long unmonitored), obstacles
in black, anchors as red stars, auxiliaries as blue triangles (hollow
when unlocalized), communication edges as red lines, and a fading trail
over the last 30 steps of each agent's path.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import TrajectoryLog  # noqa: E402

TRAIL_STEPS = 30


def _draw_frame(ax, log: TrajectoryLog, step: int, max_penalty: float) -> None:
    values = log.fields[step]
    width, height = values.shape
    image = np.array(values.T)  # imshow wants rows = y
    display = np.where(log.obstacle_mask.T, np.nan, image)
    ax.imshow(display, origin="lower", cmap="viridis",
              vmin=-max_penalty, vmax=0.0,
              extent=(-0.5, width - 0.5, -0.5, height - 0.5))
    obstacle = np.where(log.obstacle_mask.T, 1.0, np.nan)
    ax.imshow(obstacle, origin="lower", cmap="gray_r", vmin=0, vmax=1,
              extent=(-0.5, width - 0.5, -0.5, height - 0.5))
    positions = log.positions[step]
    # Fading trails over the recent path.
    lo = max(0, step - TRAIL_STEPS)
    for i in range(positions.shape[0]):
        path = np.array([log.positions[t][i] for t in range(lo, step + 1)])
        for k in range(len(path) - 1):
            alpha = 0.1 + 0.9 * (k + 1) / max(1, len(path) - 1)
            ax.plot(path[k:k + 2, 0], path[k:k + 2, 1], color="white",
                    alpha=alpha * 0.6, linewidth=1.2)
    # Communication edges among current true positions.
    for i in range(positions.shape[0]):
        for j in range(i + 1, positions.shape[0]):
            if np.linalg.norm(positions[i] - positions[j]) <= log.comm_range:
                ax.plot([positions[i][0], positions[j][0]],
                        [positions[i][1], positions[j][1]],
                        color="red", linewidth=1.0, alpha=0.8)
    localized = log.localized[step]
    for i, role in enumerate(log.roles):
        x, y = positions[i]
        if role == "anchor":
            ax.plot(x, y, marker="*", color="red", markersize=14,
                    markeredgecolor="black")
        else:
            face = "tab:blue" if localized[i] else "none"
            ax.plot(x, y, marker="^", color="tab:blue", markersize=10,
                    markerfacecolor=face, markeredgecolor="tab:blue")
    ax.set_xlim(-0.5, width - 0.5)
    ax.set_ylim(-0.5, height - 0.5)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_title(f"step {step}")


def render_episode(log: TrajectoryLog, max_penalty: float, out_dir,
                   every: int = 1, fps: int = 10,
                   make_animation: bool = True) -> Tuple[List[Path], Optional[Path]]:
    """Write frame_%04d.png for every ``every``-th step and optionally an
    animation.gif; returns (frame paths, gif path or None)."""
    if not log.fields:
        raise ValueError("trajectory log has no field snapshots to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = list(range(0, len(log.fields), max(1, every)))
    frames: List[Path] = []
    for step in steps:
        fig, ax = plt.subplots(figsize=(5, 5))
        _draw_frame(ax, log, step, max_penalty)
        path = out_dir / f"frame_{step:04d}.png"
        fig.savefig(path, dpi=80, bbox_inches="tight")
        plt.close(fig)
        frames.append(path)
    gif_path = None
    if make_animation:
        from matplotlib.animation import FuncAnimation, PillowWriter
        fig, ax = plt.subplots(figsize=(5, 5))

        def update(step):
            ax.clear()
            _draw_frame(ax, log, step, max_penalty)

        animation = FuncAnimation(fig, update, frames=steps)
        gif_path = out_dir / "animation.gif"
        animation.save(gif_path, writer=PillowWriter(fps=fps))
        plt.close(fig)
    return frames, gif_path
