"""Figure rendering for the report path: convergence curves and field images."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Field

__all__ = [
    "history_figure",
    "field_figure",
    "velocity_figure",
    "sweep_figure",
    "scan_figure",
]


def history_figure(records, path: str | Path) -> None:
    """Loss and error against the epoch counter, log scale."""
    epochs = [r.epoch for r in records]
    losses = [max(r.loss, 1e-300) for r in records]
    errors = [r.error for r in records]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(epochs, losses, label="loss", color="tab:blue")
    if not all(np.isnan(errors)):
        ax.semilogy(epochs, errors, label="error", color="tab:red")
    ax.set_xlabel("epoch")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def field_figure(field: Field, path: str | Path, title: str = "") -> None:
    grid = field.grid
    fig, ax = plt.subplots(figsize=(4.5, 3.8))
    if grid.ndim == 1:
        ax.plot(grid.axis_coords(0), field.values)
        ax.set_xlabel("x")
    elif grid.ndim == 2:
        vals = field.reshaped().T  # axis 0 horizontal
        im = ax.pcolormesh(
            grid.axis_coords(0), grid.axis_coords(1), vals, shading="nearest", cmap="RdBu_r"
        )
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    else:
        # a few slices along the last axis
        plt.close(fig)
        n_slices = min(4, grid.dims[2])
        picks = np.linspace(0, grid.dims[2] - 1, n_slices).astype(int)
        fig, axes = plt.subplots(1, n_slices, figsize=(3 * n_slices, 3))
        vals = field.reshaped()
        for ax2, k in zip(np.atleast_1d(axes), picks):
            im = ax2.pcolormesh(
                grid.axis_coords(0), grid.axis_coords(1), vals[:, :, k].T,
                shading="nearest", cmap="RdBu_r",
            )
            ax2.set_title(f"slice {k}")
            ax2.set_aspect("equal")
        fig.colorbar(im, ax=list(np.atleast_1d(axes)), fraction=0.02)
        ax = None
    if title and ax is not None:
        ax.set_title(title)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def velocity_figure(u: Field, v: Field, path: str | Path, title: str = "") -> None:
    """Speed map with streamlines for a 2D velocity pair."""
    grid = u.grid
    x = grid.axis_coords(0)
    y = grid.axis_coords(1)
    uu = u.reshaped().T
    vv = v.reshaped().T
    speed = np.sqrt(uu**2 + vv**2)
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    im = ax.pcolormesh(x, y, speed, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, fraction=0.046, label="|u|")
    ax.streamplot(x, y, uu, vv, color="w", density=1.4, linewidth=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(values, errors, path: str | Path, axis_name: str = "value") -> None:
    """Error against the swept parameter, log-log, with a slope-(-2) guide."""
    values = np.asarray(values, dtype=float)
    errors = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ok = np.isfinite(errors) & (errors > 0)
    ax.loglog(values[ok], errors[ok], "o-", label="error")
    if ok.sum() >= 2:
        ref = errors[ok][0] * (values[ok] / values[ok][0]) ** -2.0
        ax.loglog(values[ok], ref, "k--", alpha=0.5, label="slope -2")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("final error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def scan_figure(ks, estimates, eps: float, path: str | Path) -> None:
    """Reconstruction-error estimate against the number of data points."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(ks, estimates, "o-")
    ax.axhline(eps, color="k", linestyle="--", alpha=0.6, label=f"target {eps}")
    ax.set_xlabel("points")
    ax.set_ylabel("best error")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
