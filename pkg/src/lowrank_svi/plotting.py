"""Figure rendering for experiment reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def convergence_figure(curves, path, xlabel="gradient evaluations",
                       ylabel="KL divergence", logy=True, title=None):
    """One line per labelled series; series are (x, y) arrays.

    Writes the figure to ``path`` (format from the extension, e.g. .svg).
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, (x, y) in curves.items():
        ax.plot(x, y, label=label, linewidth=1.6)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if curves:
        ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
