"""Figure rendering for CLI reports (PNG files next to the CSV output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["window_figure", "sweep_figure", "zeta_figure"]


def _finite(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & (y > 0)
    return x[keep], y[keep]


def window_figure(path, t, exact_tv, eta=None, tilde=None, window=None) -> None:
    """Exact TV relaxation curve with the applicable bound curves overlaid."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs, ys = _finite(t, exact_tv)
    ax.loglog(xs, ys, "o-", color="tab:blue", label="exact TV")
    if eta is not None:
        xs, ys = _finite(t, eta)
        if xs.size:
            ax.loglog(xs, ys, "s--", color="tab:orange", label="eta bound")
    if tilde is not None:
        xs, ys = _finite(t, tilde)
        if xs.size:
            ax.loglog(xs, ys, "^--", color="tab:green", label="accelerated bound")
    if window is not None and np.isfinite(window[0]) and np.isfinite(window[1]):
        if window[0] < window[1]:
            ax.axvspan(window[0], window[1], color="gray", alpha=0.15, label="informal window")
    ax.set_xlabel("time")
    ax.set_ylabel("total variation")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(path, grid, tv, bound=None, xlabel="A") -> None:
    """Scaling study: exact TV (and bound) against the sweep variable."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs, ys = _finite(grid, tv)
    ax.semilogy(xs, ys, "o-", color="tab:blue", label="exact TV")
    if xs.size >= 2:
        coef = np.polyfit(xs, np.log(ys), 1)
        ax.semilogy(xs, np.exp(np.polyval(coef, xs)), ":", color="tab:blue",
                    label=f"fit slope {coef[0]:.3f}")
    if bound is not None:
        xs, ys = _finite(grid, bound)
        if xs.size:
            ax.semilogy(xs, ys, "s--", color="tab:orange", label="TV bound")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("total variation")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def zeta_figure(path, zetas, tv_bounds, best_zeta=None) -> None:
    """Bound value across the zeta grid with the optimum marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs, ys = _finite(zetas, tv_bounds)
    ax.loglog(xs, ys, "o-", color="tab:blue", label="TV bound")
    if best_zeta is not None:
        ax.axvline(best_zeta, color="tab:red", linestyle=":", label=f"optimum {best_zeta:.3g}")
    ax.set_xlabel("zeta")
    ax.set_ylabel("bound value")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
