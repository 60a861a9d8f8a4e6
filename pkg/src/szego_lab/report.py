"""Figure rendering for the command-line front end.

Every report writes plot-ready CSV next to a rendered PNG; rendering uses the
Agg backend only, so it works headless.
"""

from __future__ import annotations

from typing import Dict, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def spectrum_figure(arcs: Sequence[Sequence[float]], path: str) -> str:
    """Arcs of the unit circle marked on the circle itself."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    t = np.linspace(0, 2 * np.pi, 512)
    ax.plot(np.cos(t), np.sin(t), color="0.85", lw=1)
    for lo, hi in arcs:
        seg = np.linspace(lo, hi, max(int(200 * (hi - lo)), 2))
        ax.plot(np.cos(seg), np.sin(seg), color="C3", lw=3)
    ax.set_aspect("equal")
    ax.set_title("spectrum arcs")
    ax.set_xticks([]), ax.set_yticks([])
    return _save(fig, path)


def curve_figure(zetas: np.ndarray, values: np.ndarray, ylabel: str,
                 path: str, stderr: np.ndarray = None) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(zetas, values, lw=1.2)
    if stderr is not None:
        ax.fill_between(zetas, values - stderr, values + stderr, alpha=0.3)
    ax.set_xlabel(r"$\zeta$ (radians)")
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def dos_figure(grid_angles: np.ndarray, cdf: np.ndarray, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.step(grid_angles, cdf, where="post", lw=1.2)
    ax.plot(grid_angles, grid_angles / (2 * np.pi), color="0.7", ls="--",
            lw=1, label="free")
    ax.set_xlabel(r"$\zeta$ (radians)")
    ax.set_ylabel("integrated DOS")
    ax.legend()
    return _save(fig, path)


def holder_figure(rows: Sequence[Dict], path: str) -> str:
    """log-log window mass vs epsilon, one line per zeta."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_zeta: Dict[float, list] = {}
    for r in rows:
        by_zeta.setdefault(r["zeta"], []).append((r["epsilon"], r["mass"]))
    for zeta, pts in sorted(by_zeta.items()):
        pts.sort()
        eps = [p[0] for p in pts]
        mass = [max(p[1], 1e-300) for p in pts]
        ax.loglog(eps, mass, marker="o", ms=3, label=f"$\\zeta$={zeta:.3f}")
    ax.set_xlabel(r"$\epsilon$")
    ax.set_ylabel(r"$k(\zeta\pm\epsilon)$")
    if len(by_zeta) <= 10:
        ax.legend(fontsize=7)
    return _save(fig, path)


def decay_figure(steps: Sequence[int], values: Sequence[float], ylabel: str,
                 path: str) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(steps, [max(v, 1e-300) for v in values], marker="o")
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def scatter_figure(xs: Sequence[float], ys: Sequence[float], xlabel: str,
                   ylabel: str, path: str, diagonal: bool = True) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(xs, ys, s=12)
    if diagonal and len(xs):
        lim = [0, max(max(xs), max(ys)) * 1.1]
        ax.plot(lim, lim, color="0.7", ls="--", lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
