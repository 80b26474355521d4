"""Figure data (CSV) and minimal SVG renderings.

Every figure is emitted data-first: a CSV with exactly the plotted rows plus
a small hand-written SVG.  Scatter markers are circles whose area is
proportional to the size variable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .segmentation import LifespanGroup, PlayerProfile, SpendingGroup, select_skillful
from .survival import SurvivalCurve
from .telemetry import AXES, Axis

VARIABLES = ("lifetime", "level", "playtime", "ltv")
MAX_RADIUS = 12.0
WIDTH, HEIGHT, PAD = 640.0, 480.0, 50.0

PALETTE = {
    "short": "#d62728", "medium": "#ff7f0e", "long": "#2ca02c", "loyal": "#1f77b4",
    "low": "#9467bd", "normal": "#8c564b", "high": "#e377c2",
}
GROUP_ORDER = {"lifetime": [g.value for g in LifespanGroup], "level": [g.value for g in LifespanGroup],
               "playtime": [g.value for g in LifespanGroup], "ltv": [g.value for g in SpendingGroup],
               "spending": [g.value for g in SpendingGroup]}


def _row(p, key):
    """Uniform view over PlayerProfile objects and rows read back from profiles.csv."""
    if isinstance(p, PlayerProfile):
        if key == "player_id":
            return p.player_id
        if key == "ltv":
            return p.predicted_ltv
        if key in ("spending", "ltv_group", "spending_group"):
            return p.spending.value
        name, _, part = key.partition("_")
        ap = p.axis(name)
        return ap.group.value if part == "group" else ap.median
    if key in ("spending", "ltv_group"):
        key = "spending_group"
    return p[key]


def value_of(p, variable: str):
    return _row(p, "ltv" if variable == "ltv" else f"{variable}_median")


def group_of(p, variable: str) -> str:
    if variable in ("ltv", "spending"):
        return _row(p, "spending_group")
    return _row(p, f"{variable}_group")


def scatter_eligible(p, x: str, y: str, size_by: str) -> bool:
    """Non-loyal on both plotted axes, with every plotted value present."""
    for var in (x, y):
        if var != "ltv" and group_of(p, var) == LifespanGroup.LOYAL.value:
            return False
    return all(value_of(p, v) is not None for v in (x, y, size_by))


def hist_eligible(p, variable: str) -> bool:
    if variable == "ltv":
        return True
    return group_of(p, variable) != LifespanGroup.LOYAL.value and value_of(p, variable) is not None


def _num(v: float) -> str:
    return repr(float(v))


# -- scatter -------------------------------------------------------------------

@dataclass
class ScatterRow:
    player_id: str
    x: float
    y: float
    color_group: str
    size_value: float
    outlier: bool


def scatter_rows(profiles: Sequence, x: str, y: str, color_by: str, size_by: str,
                 outlier_factor: float = 3.0, outlier_percentile: float = 99.0) -> list[ScatterRow]:
    for v in (x, y, size_by):
        if v not in VARIABLES:
            raise KeyError(f"unknown variable {v!r}")
    if color_by not in GROUP_ORDER:
        raise KeyError(f"unknown grouping {color_by!r}")
    rows = [ScatterRow(_row(p, "player_id"), float(value_of(p, x)), float(value_of(p, y)),
                       group_of(p, color_by), float(value_of(p, size_by)), False)
            for p in profiles if scatter_eligible(p, x, y, size_by)]
    ratios = np.array([r.y / r.x for r in rows if r.x > 0])
    if ratios.size:
        cut = outlier_factor * np.percentile(ratios, outlier_percentile)
        for r in rows:
            r.outlier = r.x > 0 and r.y / r.x > cut
    return rows


def emit_scatter(profiles: Sequence, x: str, y: str, color_by: str, size_by: str,
                 csv_path, svg_path=None, title: str = "") -> list[ScatterRow]:
    rows = scatter_rows(profiles, x, y, color_by, size_by)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["player_id", "x", "y", "color_group", "size_value", "outlier"])
        for r in rows:
            w.writerow([r.player_id, _num(r.x), _num(r.y), r.color_group, _num(r.size_value), int(r.outlier)])
    if svg_path is not None:
        Path(svg_path).write_text(scatter_svg(rows, x, y, color_by, title))
    return rows


def circle_radius(size: float, max_size: float) -> float:
    if max_size <= 0:
        return 0.0
    return MAX_RADIUS * math.sqrt(max(size, 0.0) / max_size)


def _scale(values, lo_px, hi_px):
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    return lambda v: lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px)


def _svg_open(title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:g}" height="{HEIGHT:g}" '
            f'viewBox="0 0 {WIDTH:g} {HEIGHT:g}">',
            f'<title>{escape(title)}</title>',
            f'<rect x="0" y="0" width="{WIDTH:g}" height="{HEIGHT:g}" fill="white"/>']


def _legend(groups, lines):
    for i, g in enumerate(groups):
        y = PAD + 16 * i
        lines.append(f'<rect class="legend" x="{WIDTH - 110:g}" y="{y - 9:g}" width="10" height="10" '
                     f'fill="{PALETTE.get(g, "#7f7f7f")}"/>')
        lines.append(f'<text x="{WIDTH - 95:g}" y="{y:g}" font-size="11">{escape(g)}</text>')


def _axes(xlabel, ylabel, lines):
    lines.append(f'<line x1="{PAD:g}" y1="{HEIGHT - PAD:g}" x2="{WIDTH - 130:g}" y2="{HEIGHT - PAD:g}" stroke="black"/>')
    lines.append(f'<line x1="{PAD:g}" y1="{PAD:g}" x2="{PAD:g}" y2="{HEIGHT - PAD:g}" stroke="black"/>')
    lines.append(f'<text x="{(WIDTH - 80) / 2:g}" y="{HEIGHT - 15:g}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    lines.append(f'<text x="15" y="{HEIGHT / 2:g}" font-size="12" transform="rotate(-90 15 {HEIGHT / 2:g})" '
                 f'text-anchor="middle">{escape(ylabel)}</text>')


def scatter_svg(rows: Sequence[ScatterRow], x: str, y: str, color_by: str, title: str = "") -> str:
    lines = _svg_open(title or f"{y} vs {x}")
    _axes(x, y, lines)
    if not rows:
        lines.append(f'<text class="empty" x="{WIDTH / 2:g}" y="{HEIGHT / 2:g}" text-anchor="middle">'
                     'no eligible players</text>')
    else:
        sx = _scale([r.x for r in rows], PAD + MAX_RADIUS, WIDTH - 130 - MAX_RADIUS)
        sy = _scale([r.y for r in rows], HEIGHT - PAD - MAX_RADIUS, PAD + MAX_RADIUS)
        max_size = max(r.size_value for r in rows)
        for r in rows:
            lines.append(
                f'<circle data-player="{escape(r.player_id)}" data-size="{_num(r.size_value)}" '
                f'cx="{sx(r.x):.3f}" cy="{sy(r.y):.3f}" r="{_num(circle_radius(r.size_value, max_size))}" '
                f'fill="{PALETTE.get(r.color_group, "#7f7f7f")}" fill-opacity="0.5"'
                + (' stroke="black"' if r.outlier else '') + '/>')
        _legend([g for g in GROUP_ORDER[color_by] if any(r.color_group == g for r in rows)], lines)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# -- histograms ----------------------------------------------------------------

@dataclass
class Histogram:
    variable: str
    edges: np.ndarray
    counts: dict[str, np.ndarray]

    @property
    def total(self) -> int:
        return int(sum(int(c.sum()) for c in self.counts.values()))


def group_histogram(profiles: Sequence, variable: str) -> Histogram:
    if variable not in VARIABLES:
        raise KeyError(f"unknown variable {variable!r}")
    eligible = [p for p in profiles if hist_eligible(p, variable)]
    values = np.array([float(value_of(p, variable)) for p in eligible])
    groups = [group_of(p, variable) for p in eligible]
    if values.size == 0:
        return Histogram(variable, np.array([]), {})
    edges = np.histogram_bin_edges(values, bins="fd")
    counts = {}
    for g in GROUP_ORDER[variable]:
        sel = values[[gg == g for gg in groups]]
        if sel.size:
            counts[g] = np.histogram(sel, bins=edges)[0]
    return Histogram(variable, edges, counts)


def emit_group_histograms(profiles: Sequence, variable: str, csv_path, svg_path=None, title: str = "") -> Histogram:
    hist = group_histogram(profiles, variable)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "group", "bin_left", "bin_right", "count"])
        for g, counts in hist.counts.items():
            for k, c in enumerate(counts):
                w.writerow([variable, g, _num(hist.edges[k]), _num(hist.edges[k + 1]), int(c)])
    if svg_path is not None:
        Path(svg_path).write_text(histogram_svg(hist, title))
    return hist


def histogram_svg(hist: Histogram, title: str = "") -> str:
    lines = _svg_open(title or f"{hist.variable} histogram")
    _axes(hist.variable, "players", lines)
    if not hist.counts:
        lines.append(f'<text class="empty" x="{WIDTH / 2:g}" y="{HEIGHT / 2:g}" text-anchor="middle">'
                     'no eligible players</text>')
    else:
        stacked = np.zeros(hist.edges.size - 1)
        for c in hist.counts.values():
            stacked = stacked + c
        top = max(stacked.max(), 1)
        sx = _scale(list(hist.edges), PAD, WIDTH - 130)
        base = np.zeros_like(stacked)
        for g, c in hist.counts.items():
            for k, n in enumerate(c):
                if n == 0:
                    continue
                x0, x1 = sx(hist.edges[k]), sx(hist.edges[k + 1])
                h = n / top * (HEIGHT - 2 * PAD)
                y0 = HEIGHT - PAD - base[k] / top * (HEIGHT - 2 * PAD) - h
                lines.append(f'<rect x="{x0:.3f}" y="{y0:.3f}" width="{max(x1 - x0, 0.5):.3f}" '
                             f'height="{h:.3f}" fill="{PALETTE.get(g, "#7f7f7f")}"/>')
            base = base + c
        _legend(list(hist.counts), lines)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# -- survival curves -----------------------------------------------------------

def emit_curve_grid(curves: dict[str, SurvivalCurve], groups: dict[str, str], csv_path,
                    svg_path=None, n_points: int = 101, title: str = ""):
    """Curves evaluated on a shared uniform grid over the axis support."""
    end = max((c.support_end for c in curves.values()), default=0.0)
    grid = np.linspace(0.0, end, n_points) if end > 0 else np.zeros(1)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["player_id", "group", "t", "s"])
        for pid in sorted(curves):
            for t, s in zip(grid, curves[pid](grid)):
                w.writerow([pid, groups[pid], _num(t), _num(s)])
    if svg_path is not None:
        lines = _svg_open(title or "survival curves")
        _axes("t", "S(t)", lines)
        sx = _scale(list(grid), PAD, WIDTH - 130)
        sy = _scale([0.0, 1.0], HEIGHT - PAD, PAD)
        for pid in sorted(curves):
            pts = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in zip(grid, curves[pid](grid)))
            lines.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE.get(groups[pid], "#7f7f7f")}" '
                         'stroke-opacity="0.3"/>')
        _legend([g.value for g in LifespanGroup if g.value in set(groups.values())], lines)
        lines.append("</svg>")
        Path(svg_path).write_text("\n".join(lines) + "\n")
    return grid


# -- the bundle ----------------------------------------------------------------

SCATTERS = {
    "fig3_playtime_vs_lifetime": ("lifetime", "playtime", "level", "ltv"),
    "fig4_level_vs_playtime": ("playtime", "level", "lifetime", "ltv"),
    "fig5_level_vs_ltv": ("ltv", "level", "playtime", "lifetime"),
}
SKILLFUL_SCATTER = {"fig7_skillful_playtime_vs_lifetime": ("lifetime", "playtime", "spending", "ltv")}
HISTOGRAMS = {"fig2": VARIABLES}
SKILLFUL_HISTOGRAMS = {"fig6_skillful": ("lifetime", "playtime", "ltv")}


def emit_bundle(profiles: Sequence[PlayerProfile], curves: dict, out_dir) -> list[Path]:
    """Write every figure's CSV and SVG into ``out_dir``; returns the CSV paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    by_id = {p.player_id: p for p in profiles}
    for ax in AXES:
        axis_curves = {pid: c for pid, c in curves[ax].items() if pid in by_id}
        groups = {pid: by_id[pid].axis(ax).group.value for pid in axis_curves}
        path = out / f"fig1_curves_{ax.short}.csv"
        emit_curve_grid(axis_curves, groups, path, path.with_suffix(".svg"), title=f"survival: {ax.short}")
        written.append(path)
    for var in HISTOGRAMS["fig2"]:
        path = out / f"fig2_hist_{var}.csv"
        emit_group_histograms(profiles, var, path, path.with_suffix(".svg"))
        written.append(path)
    for name, (x, y, color, size) in SCATTERS.items():
        path = out / f"{name}.csv"
        emit_scatter(profiles, x, y, color, size, path, path.with_suffix(".svg"))
        written.append(path)
    skillful = select_skillful(profiles)
    for var in SKILLFUL_HISTOGRAMS["fig6_skillful"]:
        path = out / f"fig6_skillful_hist_{var}.csv"
        emit_group_histograms(skillful, var, path, path.with_suffix(".svg"))
        written.append(path)
    for name, (x, y, color, size) in SKILLFUL_SCATTER.items():
        path = out / f"{name}.csv"
        emit_scatter(skillful, x, y, color, size, path, path.with_suffix(".svg"))
        written.append(path)
    return written


def _skillful_rows(rows):
    return [r for r in rows if r["level_group"] == "loyal" and r["playtime_group"] != "loyal"]


def check_bundle(profile_rows: Sequence[dict], out_dir) -> list[str]:
    """Cross-check figure CSVs against ``profiles.csv`` rows; returns problems found."""
    out = Path(out_dir)
    problems = []

    def read(name):
        with open(out / name, newline="") as fh:
            return list(csv.DictReader(fh))

    def check_scatter(name, rows, x, y, size):
        got = read(f"{name}.csv")
        want = [r["player_id"] for r in rows if scatter_eligible(r, x, y, size)]
        if [g["player_id"] for g in got] != want:
            problems.append(f"{name}: rows do not match eligibility")
        if any(float(g["size_value"]) < 0 for g in got):
            problems.append(f"{name}: negative marker size")

    def check_hist(name, rows, variable):
        got = read(f"{name}.csv")
        n = sum(int(g["count"]) for g in got)
        want = sum(1 for r in rows if hist_eligible(r, variable))
        if n != want:
            problems.append(f"{name}: counts sum to {n}, expected {want}")

    ids = {r["player_id"] for r in profile_rows}
    for ax in AXES:
        got = read(f"fig1_curves_{ax.short}.csv")
        if {g["player_id"] for g in got} != ids:
            problems.append(f"fig1_curves_{ax.short}: players differ from profiles")
    for var in HISTOGRAMS["fig2"]:
        check_hist(f"fig2_hist_{var}", profile_rows, var)
    for name, (x, y, _, size) in SCATTERS.items():
        check_scatter(name, profile_rows, x, y, size)
    skillful = _skillful_rows(profile_rows)
    for var in SKILLFUL_HISTOGRAMS["fig6_skillful"]:
        check_hist(f"fig6_skillful_hist_{var}", skillful, var)
    for name, (x, y, _, size) in SKILLFUL_SCATTER.items():
        check_scatter(name, skillful, x, y, size)
    return problems
