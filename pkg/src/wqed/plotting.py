"""PNG figures written next to CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_spectrum(path, x, y, ylabel, xlabel="detuning (GHz)", label=None, band=None):
    """Line plot; ``band=(lo, hi)`` adds a shaded envelope."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if band is not None:
        ax.fill_between(x, band[0], band[1], alpha=0.3, lw=0, label="envelope")
    ax.plot(x, y, lw=1.2, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if label or band is not None:
        ax.legend()
    return _save(fig, path)


def plot_overlay(path, x, series: dict, xlabel, ylabel, markers=()):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, y in series.items():
        if name in markers:
            ax.plot(x, y, "o", ms=2.5, label=name)
        else:
            ax.plot(x, y, lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)


def plot_modes(path, eigenvalues, unit=1.0):
    lam = np.asarray(eigenvalues) / unit
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(lam.real, np.maximum(2 * lam.imag, 1e-300), ".", ms=4)
    ax.set_xlabel("frequency shift")
    ax.set_ylabel("decay rate")
    return _save(fig, path)
