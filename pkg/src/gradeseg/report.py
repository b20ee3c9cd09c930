"""Headline comparison table and per-epoch improvement curves."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stats import (COMPARISONS, REGIONS, Comparison, ComparisonResult, RegionKind,  # noqa: E402
                    ScoreTable, compare, per_epoch_curves)

COLUMN_TITLES = {RegionKind.CE: "CE", RegionKind.CORE: "Core", RegionKind.WHOLE: "Tumor"}
REGION_COLORS = {RegionKind.CE: "tab:red", RegionKind.CORE: "tab:blue", RegionKind.WHOLE: "tab:green"}
BOLD = "**"

# byte-stable SVG output: no timestamp, fixed element ids
_SVG_RC = {"svg.hashsalt": "gradeseg", "svg.fonttype": "none", "font.size": 9}


def format_ratio(value: float) -> str:
    return f"{value:.1f}"


def format_p(p: float) -> str:
    return f"{p:.3f}" if p >= 1e-3 else f"{p:.3e}"


def format_cell(result: ComparisonResult) -> str:
    text = f"{format_ratio(result.better_ratio)} (p={format_p(result.p_value)})"
    return f"{BOLD}{text}{BOLD}" if result.significant else text


Results = Mapping[Comparison, Mapping[RegionKind, ComparisonResult]]


def headline_results(table: ScoreTable, grades: Mapping[str, str], epoch: int,
                     baseline: str = "BASELINE") -> dict[Comparison, dict[RegionKind, ComparisonResult]]:
    return {c: compare(table, c.variant, baseline, c.subjects(grades), epoch) for c in COMPARISONS}


def render_table(results: Results, epoch: int) -> str:
    label_w = max(len(c.label) for c in results) + 2
    cells = {c: [format_cell(r[reg]) for reg in REGIONS] for c, r in results.items()}
    col_w = max(22, *(len(x) + 2 for row in cells.values() for x in row))
    lines = [
        f"Ratio in % of better performing subjects compared to baseline (epoch {epoch}).",
        f"p-values from a one-sided Wilcoxon signed-rank test; {BOLD}...{BOLD} marks p < 0.05.",
        "",
        " " * label_w + "".join(COLUMN_TITLES[r].ljust(col_w) for r in REGIONS).rstrip(),
        "-" * (label_w + col_w * len(REGIONS)),
    ]
    for comparison, row in cells.items():
        lines.append((comparison.label.ljust(label_w) + "".join(x.ljust(col_w) for x in row)).rstrip())
    return "\n".join(lines) + "\n"


def render_table_csv(results: Results, epoch: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["comparison", "region", "epoch", "n", "better_ratio", "w_statistic",
                     "p_value", "significant", "cell"])
    for comparison, row in results.items():
        for region in REGIONS:
            r = row[region]
            writer.writerow([comparison.label, region.value, epoch, r.n, format_ratio(r.better_ratio),
                             f"{r.w_statistic:g}", format_p(r.p_value), int(r.significant), format_cell(r)])
    return buf.getvalue()


def curve_table(table: ScoreTable, comparison: Comparison, grades: Mapping[str, str],
                baseline: str = "BASELINE") -> dict[RegionKind, list[tuple[int, float]]]:
    ids = comparison.subjects(grades)
    return {r: per_epoch_curves(table, comparison.variant, baseline, ids, r) for r in REGIONS}


def render_curve_csv(curves: Mapping[RegionKind, Sequence[tuple[int, float]]]) -> str:
    epochs = [e for e, _ in next(iter(curves.values()))]
    lines = ["epoch," + ",".join(r.value for r in curves) + "\n"]
    for i, epoch in enumerate(epochs):
        lines.append(f"{epoch}," + ",".join(format_ratio(c[i][1]) for c in curves.values()) + "\n")
    return "".join(lines)


def _draw_curves(ax, curves: Mapping[RegionKind, Sequence[tuple[int, float]]], title: str) -> None:
    for region, points in curves.items():
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", markersize=2.5, lw=1.2,
                color=REGION_COLORS[region], label=COLUMN_TITLES[region])
    ax.axhline(50.0, color="0.5", lw=0.8, ls="--")
    ax.set_ylim(0, 100)
    ax.set_xlabel("epoch")
    ax.set_ylabel("better than baseline [%]")
    ax.set_title(title)


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_curves(curves: Mapping[RegionKind, Sequence[tuple[int, float]]], title: str,
                path: str | os.PathLike) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2), layout="constrained")
        _draw_curves(ax, curves, title)
        ax.legend(loc="lower right", fontsize=7, frameon=False)
        _save_svg(fig, Path(path))


def plot_panel(all_curves: Mapping[Comparison, Mapping[RegionKind, Sequence[tuple[int, float]]]],
               path: str | os.PathLike) -> None:
    """2x2 grid in the fixed comparison order (top left to bottom right)."""
    with plt.rc_context(_SVG_RC):
        fig, axes = plt.subplots(2, 2, figsize=(8.5, 6.0), sharey=True, layout="constrained")
        for ax, (comparison, curves) in zip(axes.ravel(), all_curves.items()):
            _draw_curves(ax, curves, comparison.label)
        axes[0, 0].legend(loc="lower right", fontsize=7, frameon=False)
        _save_svg(fig, Path(path))


def write_report(table: ScoreTable, grades: Mapping[str, str], out_dir: str | os.PathLike,
                 epoch: int | None = None) -> dict[str, Path]:
    """Write the table (text + CSV) and one curve CSV/SVG per comparison; returns written paths."""
    out = Path(out_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    epoch = epoch or table.epochs[-1]
    results = headline_results(table, grades, epoch)
    written = {"table": out / "table.txt", "table_csv": out / "table.csv"}
    written["table"].write_text(render_table(results, epoch), encoding="utf-8")
    written["table_csv"].write_text(render_table_csv(results, epoch), encoding="utf-8")
    all_curves = {}
    for comparison in COMPARISONS:
        curves = curve_table(table, comparison, grades)
        all_curves[comparison] = curves
        csv_path = out / "curves" / f"{comparison.slug}.csv"
        svg_path = out / "curves" / f"{comparison.slug}.svg"
        csv_path.write_text(render_curve_csv(curves), encoding="utf-8")
        plot_curves(curves, comparison.label, svg_path)
        written[f"{comparison.slug}.csv"] = csv_path
        written[f"{comparison.slug}.svg"] = svg_path
    written["panel"] = out / "curves" / "all_comparisons.svg"
    plot_panel(all_curves, written["panel"])
    return written
