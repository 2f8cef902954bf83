"""Report figures rendered to PNG with the non-interactive backend.

PNG metadata is stripped of the software tag so reruns are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .colorimetry import spectral_locus  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_delta_histogram(summary, path, title="spectral difference") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    edges = summary.edges
    ax.bar(edges[:-1] * 100, summary.counts, width=np.diff(edges) * 100, align="edge",
           color="0.35", edgecolor="none")
    ax.axvline(summary.mean * 100, color="C3", lw=1, label=f"mean {summary.mean * 100:.2f}%")
    ax.set_xlabel("relative L1 difference [%]")
    ax.set_ylabel("pixels")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_cluster_spectra(cmap, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for j, row in enumerate(cmap.mean_spectra):
        if np.all(np.isnan(row)):
            continue
        n = int((cmap.labels == j).sum())
        ax.plot(cmap.wavelengths, row, lw=1.2, label=f"cluster {j} ({n} px)")
    ax.set_xlabel("wavelength [nm]")
    ax.set_ylabel("mean value")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_label_map(labels, path, title=None) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(labels, cmap="tab10", interpolation="nearest", vmin=0, vmax=9)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_confusion(cm, path, names=None, title=None) -> None:
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    n = cm.n_classes
    names = list(names) if names is not None else [str(i) for i in range(n)]
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * n, 0.8 + 0.8 * n))
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{frac[i, j] * 100:.0f}", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else "black", fontsize=8)
    ax.set_xticks(range(n), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(n), names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_chromaticity(points, path, labels=None) -> None:
    """Chromaticity coordinates drawn inside the spectral locus."""
    locus = spectral_locus()
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    fig, ax = plt.subplots(figsize=(4, 4))
    closed = np.vstack([locus, locus[:1]])
    ax.plot(closed[:, 0], closed[:, 1], color="0.3", lw=1)
    for i, (x, y) in enumerate(pts):
        ax.plot(x, y, "o", ms=5, label=None if labels is None else labels[i])
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_xlim(0, 0.8)
    ax.set_ylim(0, 0.9)
    ax.set_aspect("equal")
    if labels is not None:
        ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_bank(bank, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    wl = bank.grid.wavelengths
    for k, row in enumerate(bank.weights):
        ax.plot(wl, row, lw=1, label=f"{k}")
    ax.axhline(0, color="0.7", lw=0.5)
    ax.set_xlabel("wavelength [nm]")
    ax.set_ylabel("transmission" if bank.mode == "physical" else "weight")
    ax.legend(frameon=False, fontsize=7, ncol=3)
    fig.tight_layout()
    _save(fig, path)
