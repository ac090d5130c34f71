"""Figures for a finished report, rendered with matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import OP_ORDER, QUALITY, Tables, _ordered  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
QUALITY_COLORS = {"F": "#4c72b0", "V": "#55a868", "A": "#c44e52"}


def _figsize(n_groups: int) -> tuple[float, float]:
    width = max(4.0, 0.9 * n_groups + 2.0)
    return width, width * 0.55 if width < 8 else 4.4


def quality_by_model(tables: Tables, path: Path) -> Path:
    models = [r["model"] for r in tables.by_model]
    x = np.arange(len(models))
    bar = 0.8 / len(QUALITY)
    fig, ax = plt.subplots(figsize=_figsize(len(models)))
    for k, q in enumerate(QUALITY):
        values = [r[q] for r in tables.by_model]
        ax.bar(x + (k - 1) * bar, values, bar, label=q, color=QUALITY_COLORS[q])
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean score")
    ax.set_title("Repair quality per model")
    ax.legend(ncol=3, loc="upper right", frameon=False)
    fig.savefig(path)
    plt.close(fig)
    return path


def op_distribution(tables: Tables, path: Path) -> Path:
    models = _ordered(r["model"] for r in tables.op_distribution)
    counts = {(r["model"], r["op"]): r["count"] for r in tables.op_distribution}
    n_rows = {r["model"]: r["n"] for r in tables.cost}
    x = np.arange(len(models))
    fig, ax = plt.subplots(figsize=_figsize(len(models)))
    bottom = np.zeros(len(models))
    colors = plt.get_cmap("tab10")
    for k, op in enumerate(OP_ORDER):
        # operations per response, so models with different row counts compare
        values = np.array([counts.get((m, op), 0) / max(n_rows.get(m, 1), 1) for m in models])
        if not values.any():
            continue
        ax.bar(x, values, 0.6, bottom=bottom, label=op, color="0.55" if op == "INVALID" else colors(k))
        bottom += values
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_ylabel("operations per response")
    ax.set_title("Suggested repair operations")
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0), frameon=False)
    fig.savefig(path)
    plt.close(fig)
    return path


def quality_heatmap(table: list[dict], row_key: str, metric: str, path: Path) -> Path:
    models = _ordered(r["model"] for r in table)
    keys = _ordered(r[row_key] for r in table)
    lookup = {(r[row_key], r["model"]): r[metric] for r in table}
    grid = np.array([[lookup.get((k, m), np.nan) for m in models] for k in keys])
    fig, ax = plt.subplots(figsize=(1.1 * len(models) + 2.5, 0.45 * len(keys) + 1.5))
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(models)), models, rotation=30, ha="right")
    ax.set_yticks(range(len(keys)), keys)
    for (i, j), value in np.ndenumerate(grid):
        if not np.isnan(value):
            ax.text(j, i, f"{value:.2f}", ha="center", va="center",
                    color="white" if value < 0.6 else "black", fontsize=7)
    ax.set_title(f"{metric} by {row_key.replace('_', ' ')}")
    fig.colorbar(im, ax=ax, fraction=0.04)
    fig.savefig(path)
    plt.close(fig)
    return path


def render_figures(tables: Tables, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        paths = [
            quality_by_model(tables, out / "quality_by_model.png"),
            op_distribution(tables, out / "repair_distribution.png"),
        ]
        for q in QUALITY:
            paths.append(quality_heatmap(tables.by_encoding, "encoding_mode", q, out / f"{q}_by_encoding.png"))
            paths.append(quality_heatmap(tables.by_example, "example_mode", q, out / f"{q}_by_example.png"))
    return paths
