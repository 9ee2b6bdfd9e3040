"""Figures written by ``hpl eval``."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def comparison(results, family, path):
    """Per-task bars: HPL against safety-only and the reference controller."""
    idx = np.arange(len(results))
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(results) + 2), 3))
    if family == "flappy":
        ax.bar(idx - 0.2, [r.hpl_score for r in results], 0.4, label="HPL")
        ax.bar(idx + 0.2, [r.reference_score for r in results], 0.4, label="centre tracking")
        ax.set_ylabel("score [pipes]")
    else:
        dt = {"tube": 0.1, "track": 0.1}[family]
        ax.bar(idx - 0.27, [r.reference_steps * dt for r in results], 0.27, label="demonstrator")
        ax.bar(idx, [r.hpl_steps * dt for r in results], 0.27, label="HPL")
        ax.bar(idx + 0.27, [r.safety_steps * dt for r in results], 0.27, label="safety only")
        ax.set_ylabel("time [s]")
    ax.set_xlabel("task")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trajectory(env, runs, path):
    """Trajectories of several executions on one task, with its constraints."""
    fig, ax = plt.subplots(figsize=(6, 3))
    if env.family == "tube":
        q = np.linspace(0, env.q_end, 400)
        c = env.centerline(q)
        ax.plot(q, c + 0.5 * env.width, "k-", lw=0.8)
        ax.plot(q, c - 0.5 * env.width, "k-", lw=0.8)
        for name, ex in runs.items():
            ax.plot(ex.states[:, 0], ex.states[:, 2], label=name)
        ax.set_xlabel("q0")
        ax.set_ylabel("y")
    elif env.family == "track":
        ax.axhline(0.4, color="k", lw=0.8)
        ax.axhline(-0.4, color="k", lw=0.8)
        for name, ex in runs.items():
            ax.plot(ex.states[:, 2], ex.states[:, 3], label=name)
        ax.set_xlabel("s [m]")
        ax.set_ylabel("e_y [m]")
    else:
        from hpl.envs import flappy as fl

        end = max(ex.states[-1, 0] for ex in runs.values())
        for left, gap in zip(env.pipe_lefts, env.gap_centers):
            if left > end + fl.VIEW:
                break
            ax.add_patch(plt.Rectangle((left, 0), fl.PIPE_W, gap - fl.GAP / 2, color="g", alpha=0.4))
            ax.add_patch(plt.Rectangle((left, gap + fl.GAP / 2), fl.PIPE_W, fl.SCREEN_H, color="g", alpha=0.4))
        for name, ex in runs.items():
            ax.plot(ex.states[:, 0], ex.states[:, 1], label=name, lw=0.8)
        ax.set_ylim(0, fl.SCREEN_H)
        ax.set_xlabel("x [px]")
        ax.set_ylabel("y [px]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
