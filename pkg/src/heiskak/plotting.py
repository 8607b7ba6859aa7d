"""Deterministic SVG figures.

Figures are written with the Agg backend, a fixed SVG hash salt and no date
metadata, so identical inputs give identical files.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "heiskak", "svg.fonttype": "none", "font.size": 8}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def slice_levels(points, n=3):
    """Up to ``n`` grid levels of the third coordinate, spread across its range."""
    levels = np.unique(points[:, 2])
    idx = np.unique(np.linspace(0, len(levels) - 1, n + 2)[1:-1].round().astype(int))
    return levels[idx]


def broad_narrow_figure(decomp, path, n_slices=3):
    """Heatmaps of the dual-tube weight on ``x3`` slices, broad points marked."""
    pts = decomp.points
    h = decomp.spacing
    levels = slice_levels(pts, n_slices)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(levels), figsize=(3.2 * len(levels), 3.2), squeeze=False)
        vmax = float(decomp.totals.max()) or 1.0
        for ax, z in zip(axes[0], levels):
            on = np.abs(pts[:, 2] - z) < 0.5 * h
            i = np.round(pts[on, 0] / h).astype(int)
            j = np.round(pts[on, 1] / h).astype(int)
            n = int(np.max(np.abs(np.concatenate([i, j])))) if on.any() else 0
            img = np.full((2 * n + 1, 2 * n + 1), np.nan)
            img[j + n, i + n] = decomp.totals[on]
            ext = (-(n + 0.5) * h, (n + 0.5) * h, -(n + 0.5) * h, (n + 0.5) * h)
            ax.imshow(img, origin="lower", extent=ext, cmap="viridis", vmin=0, vmax=vmax, interpolation="nearest")
            broad = on & decomp.classes
            if broad.any():
                ax.scatter(pts[broad, 0], pts[broad, 1], s=2, c="red", marker="s", linewidths=0)
            ax.set_title(f"x3 = {z:.3g}  ({int(broad.sum())} broad)")
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        fig.tight_layout()
        _save(fig, path)


def energy_figure(nodes, values, path):
    """Per-angle ``||P_theta# nu||_q^q`` against ``theta``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(nodes, values, marker="o", ms=3)
        ax.set_xlabel("theta")
        ax.set_ylabel("projection energy")
        fig.tight_layout()
        _save(fig, path)


def cells_figure(reports, path):
    """Per-cell Frostman constant of the rescaled cell against the bound."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        mass = np.array([r.mass for r in reports])
        ratio = np.array([r.ratio for r in reports])
        ax.scatter(mass, ratio, s=6)
        ax.axhline(1.0, color="red", lw=0.8)
        ax.set_xscale("log")
        ax.set_xlabel("cell mass")
        ax.set_ylabel("rescaled Frostman / bound")
        fig.tight_layout()
        _save(fig, path)
