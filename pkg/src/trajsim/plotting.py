"""Figures written next to the CSV reports. Always renders off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_rvs_histogram(edges, counts, path, title="RVS distribution"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    widths = np.diff(edges)
    ax.bar(edges[:-1], counts, width=widths, align="edge", color="0.55", edgecolor="0.3", linewidth=0.4)
    ax.axvline(0.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("relative violation size")
    ax.set_ylabel("triples")
    ax.set_title(title)
    _finish(fig, path)


def plot_rvs_density(true_rvs, pred_rvs, path, label="model", bins=60, value_range=(-1.0, 2.0)):
    """Overlayed densities of ground-truth and predicted RVS."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    lo, hi = value_range
    for values, name, style in ((true_rvs, "ground truth", "-"), (pred_rvs, label, "--")):
        vals = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
        dens, edges = np.histogram(vals, bins=bins, range=value_range, density=True)
        centers = 0.5 * (edges[:-1] + edges[1:])
        ax.plot(centers, dens, style, label=name)
    ax.axvline(0.0, color="k", linewidth=0.6)
    ax.set_xlabel("RVS")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    _finish(fig, path)


def plot_loss_curve(loss_log, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(loss_log) + 1), loss_log)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean pair loss")
    if title:
        ax.set_title(title)
    _finish(fig, path)
