"""Minimal deterministic SVG plots (line, histogram, scatter) and a CSV dispatcher.

Numbers are written with fixed precision so identical data gives identical bytes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["PlotError", "line_plot", "histogram", "scatter_plot", "plot_csv", "read_csv"]

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


class PlotError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tick(x: float) -> str:
    if x == 0:
        return "0"
    if abs(x) >= 1e4 or abs(x) < 1e-2:
        return f"{x:.1e}"
    return f"{x:.3g}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.x0, self.x1 = _pad(*xlim)
        self.y0, self.y1 = _pad(*ylim)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{LEFT + (WIDTH - LEFT - RIGHT) / 2}" y="{HEIGHT - 12}" '
            f'text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="16" y="{TOP + (HEIGHT - TOP - BOTTOM) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {TOP + (HEIGHT - TOP - BOTTOM) / 2})">{escape(ylabel)}</text>',
        ]
        self._axes()

    def px(self, x):
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)

    def py(self, y):
        return HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)

    def _axes(self):
        b, r = HEIGHT - BOTTOM, WIDTH - RIGHT
        self.parts.append(f'<rect x="{LEFT}" y="{TOP}" width="{r - LEFT}" height="{b - TOP}" '
                          f'fill="none" stroke="black"/>')
        for v in np.linspace(self.x0, self.x1, 5):
            x = self.px(v)
            self.parts.append(f'<line x1="{_fmt(x)}" y1="{b}" x2="{_fmt(x)}" y2="{b + 5}" stroke="black"/>')
            self.parts.append(f'<text x="{_fmt(x)}" y="{b + 18}" text-anchor="middle">{_tick(v)}</text>')
        for v in np.linspace(self.y0, self.y1, 5):
            y = self.py(v)
            self.parts.append(f'<line x1="{LEFT - 5}" y1="{_fmt(y)}" x2="{LEFT}" y2="{_fmt(y)}" stroke="black"/>')
            self.parts.append(f'<text x="{LEFT - 8}" y="{_fmt(y + 4)}" text-anchor="end">{_tick(v)}</text>')

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys)
                       if math.isfinite(x) and math.isfinite(y))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def dots(self, xs, ys, color):
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                self.parts.append(f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" r="2.5" '
                                  f'fill="{color}"/>')

    def rect(self, x0, x1, y, color):
        left, right, top, base = self.px(x0), self.px(x1), self.py(y), self.py(max(self.y0, 0.0))
        self.parts.append(f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(right - left)}" '
                          f'height="{_fmt(base - top)}" fill="{color}" stroke="white"/>')

    def vline(self, x, color, label):
        p = self.px(x)
        self.parts.append(f'<line x1="{_fmt(p)}" y1="{TOP}" x2="{_fmt(p)}" y2="{HEIGHT - BOTTOM}" '
                          f'stroke="{color}" stroke-width="2"/>')
        self.parts.append(f'<text x="{_fmt(p + 4)}" y="{TOP + 14}" fill="{color}">{escape(label)}</text>')

    def legend(self, names):
        for i, name in enumerate(names):
            y = TOP + 14 + 16 * i
            color = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<rect x="{WIDTH - RIGHT - 150}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{WIDTH - RIGHT - 135}" y="{y}">{escape(str(name))}</text>')

    def save(self, path):
        Path(path).write_text("\n".join(self.parts + ["</svg>"]) + "\n", encoding="utf-8")


def _pad(lo, hi):
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi == lo:
        return lo - 0.5, hi + 0.5
    return lo, hi


def _finite_range(arrays):
    vals = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    return vals.min(), vals.max()


def line_plot(series: dict, path, title="", xlabel="", ylabel="", markers=False) -> None:
    """``series`` maps a legend name to ``(x, y)`` arrays."""
    if not series:
        raise PlotError("nothing to plot")
    xs = [np.asarray(x, dtype=np.float64) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=np.float64) for _, y in series.values()]
    c = _Canvas(_finite_range(xs), _finite_range(ys), title, xlabel, ylabel)
    for i, (x, y) in enumerate(zip(xs, ys)):
        color = PALETTE[i % len(PALETTE)]
        c.polyline(x, y, color)
        if markers:
            c.dots(x, y, color)
    if len(series) > 1:
        c.legend(series.keys())
    c.save(path)


def scatter_plot(series: dict, path, title="", xlabel="", ylabel="") -> None:
    if not series:
        raise PlotError("nothing to plot")
    xs = [np.asarray(x, dtype=np.float64) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=np.float64) for _, y in series.values()]
    c = _Canvas(_finite_range(xs), _finite_range(ys), title, xlabel, ylabel)
    for i, (x, y) in enumerate(zip(xs, ys)):
        c.dots(x, y, PALETTE[i % len(PALETTE)])
    if len(series) > 1:
        c.legend(series.keys())
    c.save(path)


def histogram(values, path, bins: int = 30, title="", xlabel="", marker: float | None = None,
              marker_label: str = "") -> None:
    """Histogram of ``values``; ``marker`` draws a red vertical reference line."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise PlotError("no finite values to plot")
    lo, hi = v.min(), v.max()
    if marker is not None:
        lo, hi = min(lo, marker), max(hi, marker)
    lo, hi = _pad(lo, hi)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    c = _Canvas((lo, hi), (0.0, float(counts.max())), title, xlabel, "count")
    for k in range(bins):
        if counts[k]:
            c.rect(edges[k], edges[k + 1], float(counts[k]), PALETTE[0])
    if marker is not None:
        c.vline(marker, "#d62728", marker_label)
    c.save(path)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    if not body:
        raise PlotError(f"{path}: CSV has a header but no rows")
    return header, body


def _col(header, body, name, cast=float):
    i = header.index(name)
    return [cast(r[i]) for r in body]


def _grouped(header, body, key, x, y):
    out = {}
    for k, xv, yv in zip(_col(header, body, key, str), _col(header, body, x), _col(header, body, y)):
        out.setdefault(k, ([], []))
        out[k][0].append(xv)
        out[k][1].append(yv)
    return out


def plot_csv(csv_path, out_path=None) -> Path:
    """Render a CSV produced by the experiment runner, choosing the plot from its header.

    Raises ``PlotError`` (and writes nothing) for empty or unrecognized files.
    """
    csv_path = Path(csv_path)
    header, body = read_csv(csv_path)
    out = Path(out_path) if out_path else csv_path.with_suffix(".svg")
    h = tuple(header)
    name = csv_path.stem
    if h == ("class", "entropy"):
        p = len(body)
        histogram(_col(header, body, "entropy"), out, title=name, xlabel="Fourier entropy (nats)",
                  marker=math.log(p), marker_label=f"ln {p}")
    elif h == ("class", "i", "sigma_ratio"):
        i = np.array(_col(header, body, "i"))
        r = np.array(_col(header, body, "sigma_ratio"))
        idx = np.unique(i)
        line_plot({"mean": (idx, [r[i == k].mean() for k in idx])}, out, name, "index i",
                  "sigma_i / sigma_1", markers=True)
    elif h == ("i", "accuracy"):
        line_plot({"accuracy": (_col(header, body, "i"), _col(header, body, "accuracy"))}, out, name,
                  "composition depth i", "accuracy")
    elif h in (("step", "norm"), ("step", "area")):
        line_plot({h[1]: (_col(header, body, "step"), _col(header, body, h[1]))}, out, name, "step", h[1])
    elif h == ("a", "column_entropy"):
        histogram(_col(header, body, "column_entropy"), out, title=name, xlabel="column entropy (nats)")
    elif h == ("phase", "epoch", "score_A", "score_B"):
        e = _col(header, body, "epoch")
        line_plot({"score_A": (e, _col(header, body, "score_A")),
                   "score_B": (e, _col(header, body, "score_B"))}, out, name, "epoch", "score")
    elif h == ("alpha", "family", "distortion"):
        line_plot(_grouped(header, body, "family", "alpha", "distortion"), out, name, "alpha",
                  "distortion", markers=True)
    elif h == ("neuron", "role", "S12", "S23"):
        scatter_plot(_grouped(header, body, "role", "S12", "S23"), out, name, "S12", "S23")
    elif h == ("pruned", "ret_f12", "ret_f23", "seed"):
        line_plot(_grouped(header, body, "seed", "ret_f12", "ret_f23"), out, name,
                  "retention f12", "retention f23", markers=True)
    elif h == ("step", "corr_f12", "corr_f23"):
        s = _col(header, body, "step")
        line_plot({"corr_f12": (s, _col(header, body, "corr_f12")),
                   "corr_f23": (s, _col(header, body, "corr_f23"))}, out, name, "step", "correlation")
    elif h == ("rank", "family", "seed", "selectivity"):
        scatter_plot(_grouped(header, body, "family", "rank", "selectivity"), out, name, "rank",
                     "selectivity ratio")
    elif h[:1] == ("t",) and h[-2:] == ("max_cross", "loss") and all(c.startswith("c_") for c in h[1:-2]):
        t = _col(header, body, "t")
        line_plot({c: (t, _col(header, body, c)) for c in h[1:-2]}, out, name, "t", "mode coefficient")
    elif h == ("epoch", "loss", "val_acc"):
        line_plot({"loss": (_col(header, body, "epoch"), _col(header, body, "loss"))}, out, name,
                  "epoch", "train loss")
    else:
        raise PlotError(f"{csv_path}: unrecognized CSV schema {header}")
    return out
