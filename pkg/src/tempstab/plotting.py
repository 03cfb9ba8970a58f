"""SVG figures: loss landscapes, accuracy/stability frontiers, training curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return path


def plot_landscape(landscape, path, targets=None, levels=20):
    """Filled contours of the loss over (p2, p3) with the argmin marked."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    step = max(1, len(landscape.p2) // 200)  # a coarser grid is enough for contours
    cs = ax.contourf(landscape.p2[::step], landscape.p3[::step], landscape.u[::step, ::step],
                     levels=levels, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="u")
    ax.plot(*landscape.argmin, "r*", ms=12, label="grid argmin")
    if targets is not None:
        ax.plot(targets[1], targets[2], "wo", mfc="none", ms=9, label="ground truth")
    ax.set_xlabel("p2")
    ax.set_ylabel("p3")
    ax.set_title(f"lam = {landscape.lam:g}")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_frontier(rows, path, base=None):
    """PSNR against instability, one point per lam (better is up and left)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    rows = sorted(rows, key=lambda r: r["lam"])
    x = [r["instability"] for r in rows]
    y = [r["psnr"] for r in rows]
    ax.plot(x, y, "o-")
    for r in rows:
        ax.annotate(f"{r['lam']:g}", (r["instability"], r["psnr"]), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
    if base is not None:
        ax.plot([base["instability"]], [base["psnr"]], "ks", label="unstabilized")
        ax.legend(fontsize=8)
    ax.set_xlabel("instability")
    ax.set_ylabel("PSNR [dB]")
    return _save(fig, path)


def plot_training(log_rows, path, keys=("loss", "val_instability", "val_psnr")):
    keys = [k for k in keys if log_rows and k in log_rows[0]]
    fig, axes = plt.subplots(1, len(keys), figsize=(3.5 * len(keys), 3), squeeze=False)
    epochs = [r["epoch"] for r in log_rows]
    for ax, k in zip(axes[0], keys):
        ax.plot(epochs, [r[k] for r in log_rows], "o-")
        ax.set_xlabel("epoch")
        ax.set_ylabel(k)
    fig.tight_layout()
    return _save(fig, path)


def plot_frames(frames, path, ncols=8):
    """Grid of the first channel of each frame."""
    frames = np.asarray(frames)
    n = len(frames)
    ncols = min(ncols, n)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.2 * ncols, 1.2 * nrows), squeeze=False)
    for i, ax in enumerate(axes.ravel()):
        ax.axis("off")
        if i < n:
            ax.imshow(frames[i, 0], cmap="gray", vmin=0, vmax=1)
    return _save(fig, path)
