"""Static figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_trajectory", "plot_settling_histogram", "plot_sweep"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(traj, path, bound=None):
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    for i in range(traj.states.shape[1]):
        ax_x.plot(traj.times, traj.states[:, i], lw=1, label=f"x{i + 1}")
    ax_x.axhline(0.0, color="k", lw=0.5)
    ax_x.set_ylabel("state")
    ax_x.legend(loc="upper right")
    ax_u.plot(traj.times, traj.controls, lw=1, color="C3")
    ax_u.set_ylabel("u")
    ax_u.set_xlabel("t")
    for ax in (ax_x, ax_u):
        if traj.settling_time is not None:
            ax.axvline(traj.settling_time, color="C2", ls="--", lw=1)
        if bound is not None:
            ax.axvline(bound, color="C1", ls=":", lw=1)
    ax_x.set_title(f"status={traj.status}, seed={traj.seed}")
    return _save(fig, path)


def plot_settling_histogram(res, path):
    st = res.stats
    t = res.settling_time[np.isfinite(res.settling_time)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(t, bins=30, color="C0", alpha=0.8)
    ax.axvline(st.mean, color="C3", lw=1.5, label=f"mean {st.mean:.4g}")
    ax.axvline(st.bound, color="C1", ls="--", lw=1.5, label=f"bound {st.bound:.4g}")
    ax.set_xlabel("settling time")
    ax.set_ylabel("runs")
    ax.set_title(f"n={st.n_runs}, settled={st.n_settled}, x0={list(res.config.x0)}")
    ax.legend()
    return _save(fig, path)


def plot_sweep(bounds, rows, path):
    ok = [(b, r.stats) for b, r in zip(bounds, rows) if not isinstance(r, Exception)]
    fig, ax = plt.subplots(figsize=(6, 4))
    if ok:
        b = np.array([p[0] for p in ok])
        m = np.array([p[1].mean for p in ok])
        lo = m - np.array([p[1].ci_lo for p in ok])
        hi = np.array([p[1].ci_hi for p in ok]) - m
        ax.errorbar(b, m, yerr=[lo, hi], fmt="o", capsize=3, label="mean settling time, 95% CI")
        grid = np.linspace(0.0, b.max() * 1.05, 2)
        ax.plot(grid, grid, "k--", lw=1, label="bound")
    ax.set_xlabel("bound")
    ax.set_ylabel("settling time")
    ax.legend()
    return _save(fig, path)
