"""Mean +- standard-error curves written directly as SVG.

Each method gets one ``<polyline class="series">`` and one
``<polygon class="band">``; axes and ticks are drawn with ``<line>`` so the
series count can be read off the file.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from bamld.harness import CSV_HEADER


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class FigureKind:
    experiment: str
    metric: str
    xlabel: str
    ylabel: str


KINDS = {
    "rmse_fig2": FigureKind("rmse_fig2", "rmse", "acquired tasks", "RMSE"),
    "rmse_fig3": FigureKind("rmse_fig3", "rmse", "acquired tasks", "RMSE"),
    "clusters_fig4": FigureKind("clusters_fig4", "rmse", "clusters", "RMSE"),
    "bo_fig5": FigureKind("bo_fig5", "regret", "iterations", "regret"),
}

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Curve:
    method: str
    steps: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


def read_rows(path: str | Path) -> list[tuple[str, int, str, int, str, float]]:
    """Parse a results CSV, reporting the first malformed line by number."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise PlotError(f"{path}: {exc.strerror}") from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise PlotError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for rec in reader:
            line = reader.line_num
            if len(rec) != len(CSV_HEADER):
                raise PlotError(f"{path}:{line}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
            try:
                rows.append((rec[0], int(rec[1]), rec[2], int(rec[3]), rec[4], float(rec[5])))
            except ValueError as exc:
                raise PlotError(f"{path}:{line}: {exc}") from exc
    return rows


def aggregate(rows, kind: FigureKind, methods: Optional[Sequence[str]] = None) -> list[Curve]:
    """Mean and standard error across seeds, per method and step."""
    vals: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for exp, _, method, step, metric, value in rows:
        if exp == kind.experiment and metric == kind.metric and (methods is None or method in methods):
            vals[method][step].append(value)
    if not vals:
        raise PlotError(f"no {kind.metric} rows for {kind.experiment}"
                        + (f" and methods {list(methods)}" if methods is not None else ""))
    curves = []
    for method in sorted(vals):
        steps = np.array(sorted(vals[method]))
        v = [np.asarray(vals[method][s]) for s in steps]
        mean = np.array([a.mean() for a in v])
        se = np.array([a.std(ddof=1) / math.sqrt(a.size) if a.size > 1 else 0.0 for a in v])
        curves.append(Curve(method, steps, mean, se))
    return curves


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def render_svg(curves: Sequence[Curve], kind: FigureKind, width: int = 640, height: int = 420) -> str:
    if not curves:
        raise PlotError("nothing to plot")
    left, right, top, bottom = 70, 150, 20, 55
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([c.steps for c in curves]).astype(float)
    lo = np.concatenate([c.mean - c.stderr for c in curves])
    hi = np.concatenate([c.mean + c.stderr for c in curves])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(lo.min()), float(hi.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line class="axis" x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line class="tick" x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line class="tick" x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text class="xlabel" x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">'
               f'{escape(kind.xlabel)}</text>')
    out.append(f'<text class="ylabel" x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(kind.ylabel)}</text>')
    for i, c in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        upper = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(c.steps, c.mean + c.stderr)]
        lower = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(c.steps[::-1], (c.mean - c.stderr)[::-1])]
        out.append(f'<polygon class="band" data-method="{escape(c.method)}" points="{" ".join(upper + lower)}" '
                   f'fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(c.steps, c.mean))
        out.append(f'<polyline class="series" data-method="{escape(c.method)}" points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 16 + 18 * i
        out.append(f'<line class="legend" x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(c.method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_curves(csv_path: str | Path, kind: str, out_path: Optional[str | Path] = None,
                methods: Optional[Sequence[str]] = None) -> Path:
    if kind not in KINDS:
        raise PlotError(f"unknown figure kind {kind!r}; expected one of {sorted(KINDS)}")
    if methods is not None and len(methods) == 0:
        raise PlotError("empty method subset")
    fk = KINDS[kind]
    curves = aggregate(read_rows(csv_path), fk, methods)
    out_path = Path(out_path) if out_path is not None else Path(csv_path).with_name(f"{kind}.svg")
    out_path.write_text(render_svg(curves, fk))
    return out_path
