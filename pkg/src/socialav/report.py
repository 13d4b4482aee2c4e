"""
SVG report charts and summary text built from the CSVs a run directory holds.

Output is byte-stable for identical inputs: the Agg backend, a fixed SVG hash
salt, text kept as text and no creation date in the metadata.
"""
from __future__ import annotations

import csv
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .logging_utils import setup_logger  # noqa: E402
from .validation import parse_float, read_csv_rows  # noqa: E402

logger = setup_logger("socialav.report")

REPORT_PARAMS = {
    "svg.hashsalt": "socialav-report",
    "svg.fonttype": "none",
    "path.simplify": False,
    "figure.figsize": (7.0, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "legend.frameon": False,
}
SVG_METADATA = {"Date": None, "Creator": "socialav"}


@dataclass
class Series:
    label: str
    x: List[float] = field(default_factory=list)
    y: List[float] = field(default_factory=list)


def smooth(values: Sequence[float], window: int) -> List[float]:
    """Trailing moving average; ``window`` <= 1 leaves the values untouched."""
    values = [float(v) for v in values]
    if window <= 1:
        return values
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1):i + 1]
        out.append(math.fsum(chunk) / len(chunk))
    return out


def read_series(path: str, x_col: str, y_col: str, group_cols: Sequence[str] = ()) -> List[Series]:
    """Group CSV rows into line series; cells that fail to parse raise with their line number."""
    _, rows = read_csv_rows(path, [x_col, y_col, *group_cols])
    groups: "OrderedDict[str, Series]" = OrderedDict()
    for line_number, row in enumerate(rows, start=2):
        label = " ".join(f"{c}={row[c]}" for c in group_cols) or y_col
        s = groups.setdefault(label, Series(label))
        s.x.append(parse_float(row[x_col], line_number, x_col))
        s.y.append(parse_float(row[y_col], line_number, y_col))
    return list(groups.values())


def _has_columns(path: str, columns: Sequence[str]) -> bool:
    with open(path, "r", newline="") as f:
        header = next(csv.reader(f), [])
    return all(c in header for c in columns)


def _save(fig: "plt.Figure", path: str) -> str:
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def plot_lines(series: Sequence[Series], path: str, title: str, xlabel: str, ylabel: str, smoothing: int = 0) -> List[Series]:
    """Line chart of ``series``; returns exactly the points drawn."""
    drawn = [Series(s.label, list(s.x), smooth(s.y, smoothing)) for s in series]
    with matplotlib.rc_context(REPORT_PARAMS):
        fig, ax = plt.subplots()
        for s in drawn:
            ax.plot(s.x, s.y, label=s.label, linewidth=1.2)
        if not drawn or not any(s.x for s in drawn):
            ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
        elif len(drawn) > 1:
            ax.legend()
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        _save(fig, path)
    return drawn


def plot_bars(categories: Sequence[str], panels: Dict[str, Sequence[Optional[float]]], path: str, title: str) -> None:
    """One bar panel per metric over shared categories; missing values are left blank."""
    with matplotlib.rc_context(REPORT_PARAMS):
        fig, axes = plt.subplots(1, max(1, len(panels)), squeeze=False)
        if not categories:
            axes[0][0].text(0.5, 0.5, "no data", ha="center", va="center", transform=axes[0][0].transAxes)
        for ax, (name, values) in zip(axes[0], panels.items()):
            xs = list(range(len(categories)))
            heights = [v if v is not None and math.isfinite(v) else 0.0 for v in values]
            ax.bar(xs, heights, color="#4c72b0")
            ax.set_xticks(xs)
            ax.set_xticklabels(categories, rotation=45, ha="right")
            ax.set_title(name)
        fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def _case_table(path: str) -> Tuple[List[str], Dict[str, List[Optional[float]]]]:
    """Per-phi means of AV speed and min-PET from a sweep table."""
    _, rows = read_csv_rows(path, ["phi", "mean_speed", "mean_min_pet"])
    by_phi: "OrderedDict[float, Dict[str, List[float]]]" = OrderedDict()
    for line_number, row in enumerate(rows, start=2):
        phi = parse_float(row["phi"], line_number, "phi")
        bucket = by_phi.setdefault(phi, {"mean_speed": [], "mean_min_pet": []})
        for col in ("mean_speed", "mean_min_pet"):
            if row[col] != "":
                value = parse_float(row[col], line_number, col)
                if math.isfinite(value):
                    bucket[col].append(value)
    categories = [f"phi={phi:.3f}" for phi in by_phi]
    panels: Dict[str, List[Optional[float]]] = {"mean AV speed (m/s)": [], "mean min-PET (s)": []}
    for bucket in by_phi.values():
        for name, col in (("mean AV speed (m/s)", "mean_speed"), ("mean min-PET (s)", "mean_min_pet")):
            vals = bucket[col]
            panels[name].append(math.fsum(vals) / len(vals) if vals else None)
    return categories, panels


def emit_report(run_dir: str, out_dir: Optional[str] = None, smoothing: int = 0) -> List[str]:
    """Render every chart the run directory has inputs for and write ``summary.txt``."""
    out_dir = out_dir or os.path.join(run_dir, "report")
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []
    summary: List[str] = []

    def _curve(name: str, csv_name: str, x_col: str, y_col: str, groups: Sequence[str], title: str, ylabel: str) -> None:
        src = os.path.join(run_dir, csv_name)
        if not os.path.exists(src) or not _has_columns(src, (x_col, y_col, *groups)):
            return
        drawn = plot_lines(read_series(src, x_col, y_col, groups), os.path.join(out_dir, name), title, x_col, ylabel, smoothing)
        written.append(name)
        for s in drawn:
            if s.y:
                summary.append(f"{name}: {s.label} final {ylabel} {s.y[-1]!r} over {len(s.y)} points")
            else:
                summary.append(f"{name}: {s.label} empty")
        if not drawn:
            summary.append(f"{name}: no data")

    _curve("reward_curve.svg", "metrics.csv", "env_steps", "mean_return_global", ("seed",), "Training return", "mean_return_global")
    _curve("curves.svg", "curves.csv", "env_steps", "mean_return_global", ("label", "seed"), "Training return per run", "mean_return_global")
    _curve("dpl_loss.svg", "dpl_loss.csv", "epoch", "val_mse", (), "DPL validation reconstruction", "val_mse")

    sweep = os.path.join(run_dir, "sweep.csv")
    if os.path.exists(sweep):
        categories, panels = _case_table(sweep)
        plot_bars(categories, panels, os.path.join(out_dir, "cases.svg"), "AV speed and PET per coordination tendency")
        written.append("cases.svg")
        for i, c in enumerate(categories):
            summary.append(f"cases.svg: {c} " + " ".join(f"{k}={v[i]!r}" for k, v in panels.items()))

    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        for line in summary:
            f.write(line + "\n")
    written.append("summary.txt")
    logger.info(f"Report written to {out_dir}: {', '.join(written)}")
    return written
