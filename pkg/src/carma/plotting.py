"""Figures for aggregate evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import SCENARIOS  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep SVG/PDF output byte-stable between runs
    "svg.hashsalt": "carma",
    "pdf.compression": 0,
}


def new_figure(width: float = 7.0, ratio: float = 0.45):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, width * ratio))
    return fig, ax


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(RC):
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _grouped_bars(ax, groups: list[str], series: dict[str, list], ylabel: str):
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(series))
    for k, (name, values) in enumerate(series.items()):
        heights = [np.nan if v is None else v for v in values]
        ax.bar(x + (k - (len(series) - 1) / 2) * width, heights, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel(ylabel)
    ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), frameon=False)


def plot_tsr(report: dict, path: str | Path) -> Path:
    """Grouped bars of task success rate per scenario/setting cell, one series per configuration."""
    groups = report["columns"] + ["all"]
    series = {row["config"]: [row["cells"][c] for c in report["columns"]] + [row["overall"]]
              for row in report["rows"]}
    fig, ax = new_figure()
    with plt.rc_context(RC):
        _grouped_bars(ax, groups, series, "task success rate")
        ax.set_title("Task success rate by scenario and setting")
    return save(fig, path)


def plot_roles(report: dict, path: str | Path) -> Path:
    groups, series = [], {}
    for scen in SCENARIOS:
        groups += [f"{scen}\nactions", f"{scen}\nobjects"]
    for row in report["rows"]:
        vals = []
        for scen in SCENARIOS:
            r = row["roles"][scen]
            vals += [None, None] if r is None else [r["actions"], r["objects"]]
        series[row["config"]] = vals
    fig, ax = new_figure()
    with plt.rc_context(RC):
        _grouped_bars(ax, groups, series, "role accuracy")
        ax.set_title("Role accuracy per scenario")
    return save(fig, path)
