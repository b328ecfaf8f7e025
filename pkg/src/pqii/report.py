"""Standalone SVG line charts from bench CSV rows."""

from __future__ import annotations

import math
import statistics
from collections import defaultdict
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .bench import BenchRow
from .pipeline import MODES

__all__ = ["line_chart", "charts_from_rows", "write_report"]

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 150, "top": 40, "bottom": 55}
COLORS = {"single": "#1f77b4", "parallel_pq": "#ff7f0e", "parallel_pq_index": "#2ca02c"}
_FALLBACK_COLORS = ["#d62728", "#9467bd", "#8c564b", "#e377c2"]

# x variables the runtime chart may be plotted against, in order of preference
_RUNTIME_AXES = ("n_rows", "m", "ks", "chunks", "threads")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + step * 1e-9:
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(
    series: dict[str, Sequence[tuple[float, float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    xticklabels: dict[float, str] | None = None,
) -> str:
    """Render one chart; each series becomes a single ``<polyline>``."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise ValueError("chart has no points")
    x0, x1 = min(xs), max(xs)
    if x0 == x1:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = min(0.0, min(ys)), max(ys)
    if y1 == y0:
        y1 = y0 + 1
    y1 += 0.05 * (y1 - y0)

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    left, bottom = MARGIN["left"], MARGIN["top"] + ph
    out.append(
        f'<path d="M{left},{MARGIN["top"]} V{bottom} H{left + pw}" fill="none" stroke="black"/>'
    )
    xtick_values = sorted(xticklabels) if xticklabels else sorted(set(xs))
    for v in xtick_values:
        label = xticklabels[v] if xticklabels else _fmt(v)
        out.append(f'<line x1="{px(v):.1f}" y1="{bottom}" x2="{px(v):.1f}" y2="{bottom + 5}" stroke="black"/>')
        out.append(
            f'<text x="{px(v):.1f}" y="{bottom + 18}" text-anchor="middle">{escape(label)}</text>'
        )
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(v):.1f}" x2="{left}" y2="{py(v):.1f}" stroke="black"/>')
        out.append(
            f'<line x1="{left}" y1="{py(v):.1f}" x2="{left + pw}" y2="{py(v):.1f}" stroke="#ddd"/>'
        )
        out.append(
            f'<text x="{left - 8}" y="{py(v) + 4:.1f}" text-anchor="end">{_fmt(v)}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>'
    )

    extra = iter(_FALLBACK_COLORS * 4)
    for i, (label, pts) in enumerate(series.items()):
        color = COLORS.get(label) or next(extra)
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 10 + 18 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(rows: Sequence[BenchRow], xname: str, yname: str) -> dict[str, list[tuple[float, float]]]:
    grouped: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        grouped[r.case_label][float(getattr(r, xname))].append(float(getattr(r, yname)))
    ordered = sorted(grouped, key=lambda c: MODES.index(c) if c in MODES else len(MODES))
    return {
        c: [(x, statistics.median(ys)) for x, ys in sorted(grouped[c].items())] for c in ordered
    }


def charts_from_rows(rows: Sequence[BenchRow]) -> dict[str, str]:
    """Map chart name to SVG text.

    ``rmse-m`` and ``rmse-ks`` are emitted only when that parameter varies.
    ``runtime`` plots total wall time against the first varying parameter,
    or against the case labels when nothing varies.
    """
    totals = [r for r in rows if r.phase == "total"]
    if not totals:
        raise ValueError("no data rows with phase=total")
    charts = {}
    for name, xname, xlabel in (("rmse-m", "m", "subspaces M"), ("rmse-ks", "ks", "code size Ks")):
        if len({getattr(r, xname) for r in totals}) > 1:
            charts[name] = line_chart(
                _series(totals, xname, "rmse"),
                f"Reconstruction RMSE vs {xlabel}", xlabel, "RMSE",
            )
    varying = [a for a in _RUNTIME_AXES if len({getattr(r, a) for r in totals}) > 1]
    if varying:
        xname = varying[0]
        charts["runtime"] = line_chart(
            _series(totals, xname, "wall_seconds"), f"Run time vs {xname}", xname, "wall seconds"
        )
    else:
        present = [c for c in MODES if any(r.case_label == c for r in totals)]
        pos = {c: float(i) for i, c in enumerate(present)}
        series = {
            c: [(pos[c], statistics.median(r.wall_seconds for r in totals if r.case_label == c))]
            for c in present
        }
        charts["runtime"] = line_chart(
            series, "Run time by case", "case", "wall seconds",
            xticklabels={v: k for k, v in pos.items()},
        )
    return charts


def write_report(rows: Sequence[BenchRow], prefix: str | Path) -> list[Path]:
    prefix = Path(prefix)
    if prefix.suffix == ".svg":
        prefix = prefix.with_suffix("")
    written = []
    for name, svg in charts_from_rows(rows).items():
        path = prefix.parent / f"{prefix.name}-{name}.svg"
        path.write_text(svg)
        written.append(path)
    return written
