"""Figure rendering for the report outputs.

Each helper draws one figure from already-serialized data series and writes
it straight to a file; nothing is ever shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def save_history_figure(rows: list[tuple[int, float, float, float]], path: str) -> None:
    """RMSE per epoch for the train, validation and test sets."""
    epochs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for column, label in ((1, "train"), (2, "validation"), (3, "test")):
        ax.plot(epochs, [r[column] for r in rows], label=label, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMSE (MPa)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_sweep_figure(ks: list[int], r2s: list[float], path: str) -> None:
    """Test R^2 as a function of the neighborhood size."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(ks, r2s, marker="o", linewidth=1.2)
    ax.set_xlabel("number of neighbors")
    ax.set_ylabel("test R$^2$")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_importance_figure(names: list[str], scores: list[float], path: str) -> None:
    """Horizontal bars, most important feature on top."""
    order = np.argsort(scores)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.barh([names[i] for i in order], [scores[i] for i in order], color="#4878a8")
    ax.set_xlabel("importance")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_scatter_figure(
    actual: np.ndarray, predicted: np.ndarray, label: str, path: str
) -> None:
    """Predicted vs actual with the diagonal and inclusive +/-10% boundaries."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    lo = 0.0
    hi = float(max(actual.max(), predicted.max())) * 1.05
    line = np.array([lo, hi])
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    ax.scatter(actual, predicted, s=14, alpha=0.6, edgecolors="none")
    ax.plot(line, line, color="black", linewidth=1.0)
    ax.plot(line, 1.1 * line, color="red", linewidth=0.9)
    ax.plot(line, 0.9 * line, color="red", linewidth=0.9)
    ax.set_xlabel("measured strength (MPa)")
    ax.set_ylabel("predicted strength (MPa)")
    ax.set_title(label)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
