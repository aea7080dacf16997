"""Static SVG figures for a single closed-loop run."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .loop import Scenario, Trajectory, composite_residual  # noqa: E402


def _residual(ax, scenario, traj, summary):
    res = composite_residual(traj, scenario)
    t = np.arange(res.size)
    ax.semilogy(t, np.maximum(res, 1e-300), lw=1.2, label="residual")
    if summary is not None and summary.sigma_fit is not None:
        lock = summary.deadbeat_lock_time or 0
        tt = t[lock:]
        ax.semilogy(tt, summary.M_fit * np.exp(-summary.sigma_fit * tt), "--", lw=1,
                    label=f"fit sigma={summary.sigma_fit:.3g}")
    if summary is not None and summary.deadbeat_lock_time is not None:
        ax.axvline(summary.deadbeat_lock_time, color="k", lw=0.6, ls=":", label="lock")
    ax.set_xlabel("t")
    ax.set_ylabel("composite residual")
    ax.legend(loc="upper right", fontsize=8)


def write_svgs(out_dir, scenario: Scenario, traj: Trajectory, summary=None) -> list[Path]:
    """Residual log plot, occupancy heat strip and estimate traces."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(7, 4))
    _residual(ax, scenario, traj, summary)
    paths.append(out_dir / f"{scenario.id}_residual.svg")
    fig.savefig(paths[-1], format="svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 2.5))
    dens = traj.x / scenario.params.a
    im = ax.imshow(dens.T, aspect="auto", origin="lower", cmap="viridis", vmin=0, vmax=1,
                   extent=(0, dens.shape[0], 0.5, scenario.params.n + 0.5))
    ax.set_xlabel("t")
    ax.set_ylabel("cell")
    fig.colorbar(im, ax=ax, label="x / a")
    paths.append(out_dir / f"{scenario.id}_density.svg")
    fig.savefig(paths[-1], format="svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    truth = scenario.theta.as_vector()
    t = np.arange(traj.theta.shape[0])
    for j in range(traj.theta.shape[1]):
        line, = ax.plot(t, traj.theta[:, j], lw=1)
        ax.axhline(truth[j], color=line.get_color(), lw=0.5, ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("estimate components")
    paths.append(out_dir / f"{scenario.id}_theta.svg")
    fig.savefig(paths[-1], format="svg")
    plt.close(fig)
    return paths
