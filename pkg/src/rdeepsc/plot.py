"""Minimal SVG line charts for metric-versus-SNR curves."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from rdeepsc.metrics import MetricsRow

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
MARKERS = ("circle", "square", "diamond", "triangle")


def series_label(row: MetricsRow) -> str:
    return f"{row.model_id} {row.channel} ratio={row.noise_ratio:g}"


def group_series(rows: Sequence[MetricsRow], metric: str = "bleu") -> dict[str, list[tuple[float, float]]]:
    series: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for r in rows:
        series[series_label(r)].append((r.snr_db, getattr(r, metric)))
    return {k: sorted(v) for k, v in series.items()}


def _marker(kind: str, x: float, y: float, color: str) -> str:
    if kind == "circle":
        return f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.5" fill="{color}"/>'
    if kind == "square":
        return f'<rect x="{x - 3:.1f}" y="{y - 3:.1f}" width="6" height="6" fill="{color}"/>'
    pts = (
        [(x, y - 4), (x + 4, y), (x, y + 4), (x - 4, y)]
        if kind == "diamond"
        else [(x, y - 4), (x + 4, y + 3), (x - 4, y + 3)]
    )
    return f'<polygon points="{" ".join(f"{a:.1f},{b:.1f}" for a, b in pts)}" fill="{color}"/>'


def line_chart(series: dict[str, list[tuple[float, float]]], title: str = "", xlabel: str = "SNR (dB)", ylabel: str = "BLEU", width: int = 640, height: int = 420) -> str:
    left, right, top, bottom = 60, 200, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 = x0 + 1
    y0, y1 = 0.0, 1.0

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        y = min(max(y, y0), y1)
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i in range(6):
        v = y0 + i * (y1 - y0) / 5
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{sy(v):.1f}" y2="{sy(v):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    for x in sorted(set(xs)):
        out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 16}" text-anchor="middle">{x:g}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16 {top + ph / 2}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(series.items()):
        color, marker = PALETTE[i % len(PALETTE)], MARKERS[(i // len(PALETTE)) % len(MARKERS)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"><title>{escape(label)}</title></polyline>')
        out += [_marker(marker, sx(x), sy(y), color) for x, y in pts]
        ly = top + 8 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" x2="{left + pw + 32}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}" data-series="{escape(label)}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_rows(rows: Sequence[MetricsRow], path: str | Path, metric: str = "bleu", title: str = "") -> None:
    ylabel = "BLEU" if metric == "bleu" else "similarity"
    Path(path).write_text(line_chart(group_series(rows, metric), title=title, ylabel=ylabel), encoding="utf-8")
