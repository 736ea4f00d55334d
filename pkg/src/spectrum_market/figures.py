"""Render report data to figure files next to the delimited output.

Everything here is presentation only: the JSON/CSV emitted by the CLI is
the contract, the PNGs are a convenience view of the same data.  The Agg
backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dynamics import Trajectory
from .experiments import AssociationReport, SweepStats


def render_association(report: AssociationReport, path) -> None:
    """Bipartite association view: users on top, providers below, edge
    width proportional to purchased quantity, prices in the labels."""
    n_users = len(report.users)
    n_prov = len(report.providers)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * n_users), 4.0))

    xu = np.linspace(0.0, 1.0, n_users + 2)[1:-1]
    xp = np.linspace(0.0, 1.0, n_prov + 2)[1:-1]
    edges = report.edges()
    qmax = max((e[2] for e in edges), default=1.0)
    for user, provider, qij, _ in edges:
        ax.plot(
            [xu[user], xp[provider]],
            [1.0, 0.0],
            color="tab:blue",
            linewidth=0.5 + 3.5 * qij / qmax,
            alpha=0.7,
            zorder=1,
        )
    undecided = set(report.undecided)
    colors = ["tab:red" if ua.user in undecided else ("0.7" if ua.zero_purchase else "tab:blue")
              for ua in report.users]
    ax.scatter(xu, np.ones(n_users), s=160, c="white", edgecolors=colors, zorder=2)
    ax.scatter(xp, np.zeros(n_prov), s=220, c="white", edgecolors="black", marker="s", zorder=2)
    for ua, x in zip(report.users, xu):
        ax.text(x, 1.0, str(ua.user), ha="center", va="center", fontsize=7, zorder=3)
    for pa, x in zip(report.providers, xp):
        ax.text(x, 0.0, str(pa.provider), ha="center", va="center", fontsize=8, zorder=3)
        ax.annotate(f"p={pa.price:.3g}", (x, -0.12), ha="center", fontsize=7)
    ax.set_ylim(-0.25, 1.15)
    ax.set_xlim(-0.05, 1.05)
    ax.set_axis_off()
    ax.set_title("Equilibrium user-provider association")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trajectory(trajectory: Trajectory, path) -> None:
    """Energy, worst clearing residual and prices against virtual time."""
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 7.5), sharex=True)
    t = trajectory.t

    axes[0].plot(t, trajectory.V, color="tab:purple")
    axes[0].set_ylabel("V")
    axes[0].set_title("Primal-dual evolution")

    worst = np.max(np.abs(trajectory.clearing), axis=1) if len(trajectory) else np.array([])
    axes[1].semilogy(t, worst, color="tab:orange")
    axes[1].set_ylabel("max |excess demand|")

    for j in range(trajectory.p.shape[1]):
        axes[2].plot(t, trajectory.p[:, j], label=f"provider {j}")
    axes[2].set_ylabel("price")
    axes[2].set_xlabel("t")
    if trajectory.p.shape[1] <= 8:
        axes[2].legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep(stats: SweepStats, path) -> None:
    """Mean iterations to convergence against user count, one std bar."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    I = [c.I for c in stats.cells]
    mean = [c.mean_iters for c in stats.cells]
    std = [c.std_iters for c in stats.cells]
    ax.errorbar(I, mean, yerr=std, marker="o", capsize=3, color="tab:blue")
    ax.set_xlabel("users")
    ax.set_ylabel("iterations to convergence")
    if stats.cells:
        c0 = stats.cells[0]
        ax.set_title(f"J={c0.J}, epsilon={c0.epsilon:g}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
