"""Figures written next to the CSV output (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lattice import EventTree, stopping_times  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_value_process(tree: EventTree, values, path, label="value"):
    """Node values against calendar time."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.scatter(tree.years(), values, s=8, color="tab:blue", alpha=0.6, lw=0)
        ax.plot(0.0, values[tree.root], "o", color="tab:red", ms=5, label=f"root {values[tree.root]:.6g}")
        ax.set_xlabel("time")
        ax.set_ylabel(label)
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_snell(tree: EventTree, L, V, rule, path):
    """Reward and envelope per node, exercise nodes highlighted."""
    t = tree.years()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.scatter(t, V, s=10, color="tab:blue", alpha=0.5, lw=0, label="envelope V")
        ax.scatter(t, L, s=6, color="0.5", alpha=0.5, lw=0, label="reward L")
        inner = np.asarray(rule, dtype=bool) & ~tree.is_terminal
        if inner.any():
            ax.scatter(t[inner], L[inner], s=18, facecolors="none", edgecolors="tab:red", lw=0.8,
                       label="stop")
        ax.set_xlabel("time")
        ax.set_ylabel("value")
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_nash(tree: EventTree, result, path):
    """Values along the iteration and, on full trees, the law of the equilibrium stopping times."""
    with plt.rc_context(_STYLE):
        ncols = 1 if tree.recombining else 2
        fig, axes = plt.subplots(1, ncols, figsize=(4.0 * ncols, 3.6), squeeze=False)
        ax = axes[0, 0]
        it = [e.iteration for e in result.trace]
        ax.plot(it, [e.j_buyer for e in result.trace], "o-", ms=3, label="buyer")
        ax.plot(it, [e.j_seller for e in result.trace], "s-", ms=3, label="seller")
        ax.set_xlabel("response")
        ax.set_ylabel("indifference value")
        ax.legend(loc="best", frameon=False)
        if ncols == 2:
            from .lattice import reach_probabilities
            ax = axes[0, 1]
            weights = reach_probabilities(tree)[tree.terminals]
            bins = np.arange(tree.steps + 2) - 0.5
            for rule, label in ((result.buyer_rule, "tau*"), (result.seller_rule, "sigma*")):
                ax.hist(stopping_times(tree, rule), bins=bins, weights=weights, alpha=0.5, label=label)
            ax.set_xlabel("stopping step")
            ax.set_ylabel("probability")
            ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_property_residuals(names, residuals, tolerances, path):
    """Worst residual per property on a log scale with its tolerance."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 0.35 * len(names) + 1.2))
        y = np.arange(len(names))
        res = np.maximum(np.asarray(residuals, dtype=float), 1e-18)
        ax.barh(y, res, color=["tab:green" if r <= t else "tab:red" for r, t in zip(res, tolerances)])
        ax.scatter(tolerances, y, marker="|", s=120, color="k", label="tolerance")
        ax.set_xscale("log")
        ax.set_yticks(y, names)
        ax.set_xlabel("worst residual")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)
