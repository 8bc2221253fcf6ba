"""Run reports: CSV tables, Markdown summaries, and SVG charts.

CSV output follows RFC 4180 (header row, CRLF line endings, minimal
quoting).  Figures are rendered with matplotlib into self-contained
800x500 SVG files; glyphs are embedded as paths and the writer is kept
byte-deterministic (fixed hash salt, no timestamp metadata) so reruns of
the same experiment produce identical artifacts.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SVG_WIDTH_PX = 800
SVG_HEIGHT_PX = 500
_POINTS_PER_INCH = 72.0

_SVG_RC = {
    "svg.fonttype": "path",
    "svg.hashsalt": "depthbench",
    "figure.figsize": (SVG_WIDTH_PX / _POINTS_PER_INCH,
                       SVG_HEIGHT_PX / _POINTS_PER_INCH),
}


def fmt_num(value) -> str:
    """Stable scalar formatting for delimited output."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int,)):
        return str(value)
    return "%.12g" % value


def write_csv(path: str | Path, header: Sequence[str],
              rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([c if isinstance(c, str) else fmt_num(c) for c in row])


def write_markdown_table(path: str | Path, title: str, header: Sequence[str],
                         rows: Sequence[Sequence]) -> None:
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join([" --- "] * len(header)) + "|")
    for row in rows:
        cells = [c if isinstance(c, str) else fmt_num(c) for c in row]
        lines.append("| " + " | ".join(cells) + " |")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _save_svg(fig, path: str | Path) -> None:
    # metadata Date=None keeps reruns byte-identical.
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_line_chart(path: str | Path, x: Sequence[float],
                      series: dict[str, Sequence[Optional[float]]],
                      xlabel: str, ylabel: str, title: str) -> None:
    """One polyline per metric over a shared linear x axis."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        for name, ys in series.items():
            ax.plot(list(x), list(ys), marker="o", label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        _save_svg(fig, path)


def render_bar_chart(path: str | Path, labels: Sequence[str],
                     values: Sequence[float], ylabel: str, title: str) -> None:
    """Per-image bar chart companion to the eval CSV."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        positions = range(len(labels))
        ax.bar(positions, list(values))
        ax.set_xticks(list(positions))
        rotation = 90 if len(labels) > 12 else 0
        ax.set_xticklabels(labels, rotation=rotation, fontsize=6 if len(labels) > 40 else 8)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, axis="y", alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, path)
