"""Figure rendering for the CLI report paths.

Each function takes already-computed table rows and writes one PNG/PDF next
to the delimited output.  Uses the Agg backend so the CLI never needs a
display.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _save(fig, path: str):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_pred_vs_obs(pairs: Sequence[tuple[str, np.ndarray, np.ndarray]],
                     path: str):
    """Observed-vs-predicted scatter, one series per target, with y = x."""
    fig, ax = plt.subplots(figsize=(5, 5))
    lo, hi = np.inf, -np.inf
    for target, obs, pred in pairs:
        ax.scatter(obs, pred, s=12, alpha=0.7, label=target)
        lo = min(lo, float(np.min(obs)), float(np.min(pred)))
        hi = max(hi, float(np.max(obs)), float(np.max(pred)))
    pad = 0.02 * (hi - lo if hi > lo else 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1)
    ax.set_xlabel("observed loss")
    ax.set_ylabel("predicted loss")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_corner_profile(rows: Sequence[tuple[str, Sequence[float]]],
                        domain_names: Sequence[str], path: str):
    """Stacked bars: the optimal mixture when each target alone matters."""
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 4))
    targets = [t for t, _ in rows]
    bottoms = np.zeros(len(rows))
    for j, name in enumerate(domain_names):
        vals = np.array([w[j] for _, w in rows])
        ax.bar(targets, vals, bottom=bottoms, label=name)
        bottoms += vals
    ax.set_ylabel("optimal weight")
    ax.set_xlabel("target")
    ax.tick_params(axis="x", rotation=45)
    ax.legend(fontsize=8, bbox_to_anchor=(1.02, 1), loc="upper left")
    _save(fig, path)


def plot_fixed_points(js_values: Sequence[float], flags: Sequence[bool],
                      threshold: float, path: str):
    """JS distance between each target weighting and its optimal mixture."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(js_values))
    colors = ["tab:red" if f else "tab:blue" for f in flags]
    ax.scatter(x, js_values, c=colors, s=14)
    ax.axhline(threshold, color="k", ls="--", lw=1,
               label=f"fixed-point threshold {threshold:g}")
    ax.set_xlabel("grid point")
    ax.set_ylabel("JS(w, h*(w))")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_asymptote_trace(budgets: Sequence[float],
                         weights: Sequence[Sequence[float]],
                         domain_names: Sequence[str], path: str):
    """Optimal weights along a compute schedule."""
    fig, ax = plt.subplots(figsize=(6, 4))
    arr = np.asarray(weights)
    for j, name in enumerate(domain_names):
        ax.plot(budgets, arr[:, j], marker="o", ms=3, label=name)
    ax.set_xscale("log")
    ax.set_xlabel("flops (6ND)")
    ax.set_ylabel("optimal weight")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_runcount(qs: Sequence[int], medians: Sequence[float],
                  q25: Sequence[float], q75: Sequence[float], path: str):
    """Held-out MRE versus number of training mixtures, with IQR band."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(qs, medians, marker="o", color="tab:blue", label="median")
    ax.fill_between(qs, q25, q75, alpha=0.25, color="tab:blue",
                    label="25-75%")
    ax.set_xlabel("training mixtures q")
    ax.set_ylabel("held-out MRE (%)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_comparison(families: Sequence[str], train_mre: Sequence[float],
                    test_mre: Sequence[float], path: str):
    """Train/test MRE per law family on a shared split."""
    fig, ax = plt.subplots(figsize=(max(4, 1.0 * len(families)), 4))
    x = np.arange(len(families))
    width = 0.38
    ax.bar(x - width / 2, train_mre, width, label="train")
    ax.bar(x + width / 2, test_mre, width, label="test")
    ax.set_xticks(x, families, rotation=30, ha="right")
    ax.set_ylabel("MRE (%)")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_trajectory(weights: Sequence[Sequence[float]],
                    domain_names: Sequence[str], path: str):
    """Mirror-descent iterates."""
    fig, ax = plt.subplots(figsize=(6, 4))
    arr = np.asarray(weights)
    for j, name in enumerate(domain_names):
        ax.plot(arr[:, j], label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("weight")
    ax.legend(fontsize=8)
    _save(fig, path)
