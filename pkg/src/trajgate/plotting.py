"""Static figures: trajectory overlays, acceleration curves, gate-sequence charts.

All functions render to a file (SVG or PNG by extension) and never touch
the numeric artifacts they read.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .policy import RolloutResult

__all__ = ["plot_trajectories", "plot_acceleration", "plot_gate_sequence"]


def plot_trajectories(result: RolloutResult, path: str | Path,
                      title: str = "rollout") -> Path:
    """Court overlay: ground truth, sampled rollouts, and the other agents."""
    fig, ax = plt.subplots(figsize=(6, 6))
    other = result.agent_positions
    for k in range(other.shape[1]):
        if k == result.role_slot:
            continue
        ax.plot(other[:, k, 0], other[:, k, 1], color="0.8", lw=0.8, zorder=1)
    for n in range(result.n_samples):
        ax.plot(result.positions[n, :, 0], result.positions[n, :, 1],
                color="tab:red", alpha=0.5, lw=1.0, zorder=2)
    ax.plot(result.truth_positions[:, 0], result.truth_positions[:, 1],
            color="tab:blue", lw=2.0, zorder=3, label="truth")
    b = result.truth_positions[result.burn_in]
    ax.scatter([b[0]], [b[1]], color="k", s=18, zorder=4, label="burn-in end")
    ax.set_title(title)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_acceleration(result: RolloutResult, path: str | Path) -> Path:
    """Predicted vs true acceleration components over the horizon."""
    t = np.arange(result.positions.shape[1]) * result.dt
    fig, axes = plt.subplots(2, 1, figsize=(7, 4), sharex=True)
    for i, axis_name in enumerate("xy"):
        ax = axes[i]
        for n in range(result.n_samples):
            ax.plot(t, result.accelerations[n, :, i], color="tab:red", alpha=0.4, lw=0.8)
        ax.plot(t, result.truth_accelerations[:, i], color="tab:blue", lw=1.5)
        ax.axvline(result.burn_in * result.dt, color="0.5", ls="--", lw=0.8)
        ax.set_ylabel(f"acc {axis_name} [m/s^2]")
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_gate_sequence(b_log: np.ndarray, path: str | Path,
                       agent_labels: list[str] | None = None) -> Path:
    """Gate-coefficient sequence chart: agents on rows, steps on columns."""
    b = np.asarray(b_log, dtype=np.float64)
    if b.ndim == 3:
        b = b[0]
    fig, ax = plt.subplots(figsize=(8, 0.35 * b.shape[1] + 1.2))
    im = ax.imshow(b.T, aspect="auto", interpolation="nearest",
                   cmap="Greys", vmin=0.0, vmax=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("agent")
    if agent_labels is not None:
        ax.set_yticks(range(len(agent_labels)))
        ax.set_yticklabels(agent_labels, fontsize=7)
    fig.colorbar(im, ax=ax, label="gate")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
