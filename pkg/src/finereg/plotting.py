"""Optional figures rendered next to the CSV output (Agg backend, PNG files)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def shell_figure(result, path):
    fig, axes = plt.subplots(1, len(result.points), figsize=(5 * len(result.points), 4),
                             squeeze=False)
    for ax, p in zip(axes[0], result.points):
        for name, rep in p.reports.items():
            if len(rep.shells) and np.any(rep.shells > 0):
                ax.semilogy(rep.k, np.where(rep.shells > 0, rep.shells, np.nan), "o-",
                            label=f"{name} (q={rep.q:.3g})")
        ax.set_xlabel("shell index k  (2^-k-1 <= |x-y| < 2^-k)")
        ax.set_ylabel("shell sum")
        ax.set_title(f"point {p.index}: {p.verdict}")
        ax.grid(True, which="both", alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ray_figure(result, path):
    fig, axes = plt.subplots(1, len(result.points), figsize=(5 * len(result.points), 4),
                             squeeze=False)
    for ax, p in zip(axes[0], result.points):
        for name, rep in p.reports.items():
            if len(rep.ts):
                ax.loglog(rep.ts, rep.ratios, "s-", label=name)
        ax.set_xlabel("t (distance along the pseudo-normal)")
        ax.set_ylabel("ratio")
        ax.set_title(f"point {p.index}")
        ax.grid(True, which="both", alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(param, entries, path):
    values = [v for v, _ in entries]
    fig, ax = plt.subplots(figsize=(5, 4))
    npts = len(entries[0][1].points)
    for i in range(npts):
        qs = [r.points[i].reports["integral-Ky"].q if "integral-Ky" in r.points[i].reports
              else np.nan for _, r in entries]
        ax.plot(values, qs, "o-", label=f"point {i}")
    ax.axhline(entries[0][1].scenario.thresholds.q_reg, ls=":", c="g")
    ax.axhline(entries[0][1].scenario.thresholds.q_sing, ls=":", c="r")
    ax.set_xlabel(param)
    ax.set_ylabel("fitted shell ratio q")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_figures(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "shells.png"), os.path.join(out_dir, "rays.png")]
    shell_figure(result, paths[0])
    ray_figure(result, paths[1])
    return paths
