"""PNG figures for the analysis tables (matplotlib, Agg backend)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns write identical bytes
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_windows(curves, path, title="Local accuracy around crossings"):
    """One panel per model; solid treatment curves, dashed controls."""
    models = sorted({c.model for c in curves})
    fig, axes = plt.subplots(1, len(models), figsize=(5 * len(models), 3.6), squeeze=False)
    for ax, model in zip(axes[0], models):
        for c in sorted((c for c in curves if c.model == model), key=lambda c: c.k):
            line, = ax.plot(c.offsets, c.mean, marker="o", label=f"crossing {c.k}")
            ax.plot(c.offsets, c.control_mean, ls="--", color=line.get_color(), alpha=0.7)
        ax.axvline(0, color="grey", lw=0.8)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("token offset")
        ax.set_ylabel("accuracy")
        ax.set_title(model, fontsize=9)
        ax.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_confounds(results, path, q=None):
    """Cumulative accuracy against the number of confounds already passed."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for model, curves in results:
        xs = [b for b, _, _ in curves.cumulative]
        ys = [m for _, m, _ in curves.cumulative]
        ax.plot(xs, ys, marker="o", label=model)
    if q is not None and results:
        kmax = max(b for _, c in results for b, _, _ in c.cumulative)
        ks = np.arange(kmax + 1)
        ax.plot(ks, (1 - q) ** ks, ls=":", color="black", label=f"(1-{q:g})^k")
    ax.set_xlabel("confounds encountered before token")
    ax.set_ylabel("token accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_cells(rows, path, title="Exact match by tortuosity and crossing bin"):
    """Heatmap per model of the metric averaged over point counts and buckets."""
    per_model = defaultdict(lambda: defaultdict(list))
    for model, t, s, n, b, count, value, status in rows:
        if status == "present":
            per_model[model][(t, s)].append(value)
    models = sorted(per_model)
    if not models:
        models = ["(no data)"]
    fig, axes = plt.subplots(1, len(models), figsize=(4.4 * len(models), 3.8), squeeze=False)
    for ax, model in zip(axes[0], models):
        grid = np.full((6, 6), np.nan)
        for (t, s), vals in per_model.get(model, {}).items():
            grid[s, t] = np.mean(vals)
        im = ax.imshow(grid, origin="lower", vmin=0, vmax=1, cmap="viridis")
        for s in range(6):
            for t in range(6):
                if not np.isnan(grid[s, t]):
                    ax.text(t, s, f"{grid[s, t]:.2f}", ha="center", va="center", fontsize=7, color="white")
        ax.set_xlabel("tortuosity bin")
        ax.set_ylabel("crossing regime")
        ax.set_title(model, fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_regimes(rows, path):
    """Grouped bars of per-regime deltas (percentage points)."""
    models = sorted({r[0] for r in rows})
    regimes = [reg for reg in ("ltr_tb", "rtl_tb", "ttb_rl", "ttb_lr") if any(r[1] == reg for r in rows)]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    width = 0.8 / max(1, len(models))
    for i, model in enumerate(models):
        vals = {r[1]: r[3] for r in rows if r[0] == model}
        xs = np.arange(len(regimes)) + i * width
        ax.bar(xs, [vals.get(reg, 0.0) for reg in regimes], width, label=model)
    ax.axhline(0, color="black", lw=0.8)
    ax.set_xticks(np.arange(len(regimes)) + 0.4 - width / 2)
    ax.set_xticklabels(regimes)
    ax.set_ylabel("delta vs model mean (pts)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
