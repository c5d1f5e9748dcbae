"""Matplotlib figures written next to the text reports."""

from __future__ import annotations

import os
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import AblationRow, EvalReport, ScoreSection, SelectionSection  # noqa: E402

MODE_ORDER = ("generic", "fewshot", "toolmem")
MODE_COLORS = {"generic": "#9e9e9e", "fewshot": "#6a9fcb", "toolmem": "#d1603d"}

# fixed metadata keeps the PNG bytes stable between identical runs
_PNG_META = {"Software": None}

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
})


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_scores(sections: list[ScoreSection], path: str | os.PathLike) -> Path:
    tools = sorted({s.tool_id for s in sections})
    modes = [m for m in MODE_ORDER if any(s.mode == m for s in sections)]
    lookup = {(s.tool_id, s.mode): s for s in sections}
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    width = 0.8 / max(len(modes), 1)
    x = np.arange(len(tools))
    for ax, metric in zip(axes, ("mae", "rmse")):
        for i, mode in enumerate(modes):
            vals = [getattr(lookup[(t, mode)], metric) if (t, mode) in lookup else np.nan for t in tools]
            ax.bar(x + (i - (len(modes) - 1) / 2) * width, vals, width, label=mode,
                   color=MODE_COLORS.get(mode))
        ax.set_xticks(x, tools)
        ax.set_ylabel(metric.upper())
    axes[0].legend()
    fig.suptitle("Score prediction error")
    return _save(fig, Path(path))


def plot_selection(sections: list[SelectionSection], path: str | os.PathLike) -> Path:
    pairs = sorted({(s.tool_a, s.tool_b) for s in sections})
    modes = [m for m in MODE_ORDER if any(s.mode == m for s in sections)]
    lookup = {(s.tool_a, s.tool_b, s.mode): s for s in sections}
    fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(pairs) + 2), 3))
    width = 0.8 / max(len(modes), 1)
    x = np.arange(len(pairs))
    for i, mode in enumerate(modes):
        vals = []
        for a, b in pairs:
            s = lookup.get((a, b, mode))
            vals.append(np.nan if s is None or s.acc is None else s.acc)
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, vals, width, label=mode, color=MODE_COLORS.get(mode))
    ax.set_xticks(x, [f"{a}\nvs {b}" for a, b in pairs])
    ax.set_ylim(0, 1)
    ax.set_ylabel("Acc (unequal pairs)")
    ax.legend()
    return _save(fig, Path(path))


def plot_ablation(rows: list[AblationRow], path: str | os.PathLike, marker_k: int | None = 12) -> Path:
    by_tool: dict[str, list[AblationRow]] = defaultdict(list)
    for r in rows:
        by_tool[r.tool_id].append(r)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3), sharex=True)
    for tool, tool_rows in sorted(by_tool.items()):
        tool_rows.sort(key=lambda r: r.k)
        ks = [r.k for r in tool_rows]
        axes[0].plot(ks, [r.mae for r in tool_rows], marker="o", ms=3, label=tool)
        axes[1].plot(ks, [r.rmse for r in tool_rows], marker="o", ms=3, label=tool)
    for ax, name in zip(axes, ("MAE", "RMSE")):
        if marker_k is not None:
            ax.axvline(marker_k, ls="--", lw=0.8, color="k")
        ax.set_xlabel("top-k per category")
        ax.set_ylabel(name)
    axes[0].legend()
    return _save(fig, Path(path))


def render_figures(report: EvalReport, directory: str | os.PathLike, stem: str = "report") -> list[Path]:
    directory = Path(directory)

    def name(kind: str) -> Path:
        return directory / (f"{stem}.png" if stem == kind else f"{stem}_{kind}.png")

    out = []
    if report.scores:
        out.append(plot_scores(report.scores, name("scores")))
    if report.selections:
        out.append(plot_selection(report.selections, name("selection")))
    if report.ablations:
        out.append(plot_ablation(report.ablations, name("ablation")))
    return out
