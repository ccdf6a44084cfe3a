"""A small deterministic SVG writer: polylines, markers, axis ticks, heatmaps."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["nice_ticks", "line_chart", "heatmap"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
_MARGIN = (70, 20, 40, 55)  # left, right, top, bottom


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions covering [lo, hi] with spacing 1, 2 or 5 times a power of ten."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi == lo:
        return [lo]
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        v = first + k * step
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        k += 1
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    def __init__(self, x_range, y_range, width, height):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        left, right, top, bottom = _MARGIN
        self.left, self.top = left, top
        self.w = width - left - right
        self.h = height - top - bottom

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return self.top + (1.0 - (y - self.y0) / (self.y1 - self.y0)) * self.h


def _axes(frame: _Frame, title, xlabel, ylabel, width, height) -> list[str]:
    out = [
        f'<rect x="{frame.left}" y="{frame.top}" width="{frame.w}" height="{frame.h}" '
        'fill="none" stroke="#000"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{frame.left + frame.w / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{frame.top + frame.h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {frame.top + frame.h / 2:.1f})">{escape(ylabel)}</text>',
    ]
    base = frame.top + frame.h
    for t in nice_ticks(frame.x0, frame.x1):
        X = _fmt(frame.px(t))
        out.append(f'<line x1="{X}" y1="{base}" x2="{X}" y2="{base + 5}" stroke="#000"/>')
        out.append(f'<text x="{X}" y="{base + 18}" text-anchor="middle" font-size="10">{t:.4g}</text>')
    for t in nice_ticks(frame.y0, frame.y1):
        Y = _fmt(frame.py(t))
        out.append(f'<line x1="{frame.left - 5}" y1="{Y}" x2="{frame.left}" y2="{Y}" stroke="#000"/>')
        out.append(f'<text x="{frame.left - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle" '
                   f'font-size="10">{t:.4g}</text>')
    return out


def _document(body: list[str], width: int, height: int) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>"]) + "\n"


def line_chart(series, title: str = "", xlabel: str = "", ylabel: str = "", markers=(),
               hlines=(), width: int = 640, height: int = 420) -> str:
    """Polylines for each (label, xs, ys); non-finite samples break the line."""
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.array([0.0])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.array([0.0])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    xs_all, ys_all = xs_all[ok], ys_all[ok]
    if xs_all.size == 0:
        xs_all = ys_all = np.array([0.0])
    pad = 0.05 * (ys_all.max() - ys_all.min() or 1.0)
    frame = _Frame((xs_all.min(), xs_all.max()), (ys_all.min() - pad, ys_all.max() + pad), width, height)
    body = _axes(frame, title, xlabel, ylabel, width, height)
    for y in hlines:
        if frame.y0 <= y <= frame.y1:
            Y = _fmt(frame.py(y))
            body.append(f'<line x1="{frame.left}" y1="{Y}" x2="{frame.left + frame.w}" y2="{Y}" '
                        'stroke="#888" stroke-dasharray="4 3"/>')
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        run: list[str] = []
        runs = []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                run.append(f"{_fmt(frame.px(x))},{_fmt(frame.py(y))}")
            elif run:
                runs.append(run)
                run = []
        if run:
            runs.append(run)
        for r in runs:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(r)}"/>')
        if label:
            ly = frame.top + 14 + 14 * k
            body.append(f'<text x="{frame.left + frame.w - 6}" y="{ly}" text-anchor="end" '
                        f'font-size="11" fill="{color}">{escape(label)}</text>')
    for x, y in markers:
        body.append(f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="4" '
                    'fill="none" stroke="#d62728" stroke-width="1.5"/>')
    return _document(body, width, height)


def heatmap(xs, ys, values, title: str = "", xlabel: str = "", ylabel: str = "",
            width: int = 640, height: int = 480) -> str:
    """Cells coloured by integer value; ``values[j][i]`` belongs to (xs[i], ys[j])."""
    xs, ys = list(map(float, xs)), list(map(float, ys))
    vals = np.asarray(values, dtype=float)
    frame = _Frame((min(xs), max(xs)), (min(ys), max(ys)), width - 90, height)
    vmax = float(np.nanmax(vals)) if np.isfinite(vals).any() else 1.0
    levels = sorted({int(v) for v in vals.ravel() if math.isfinite(v)})

    def colour(v):
        if not math.isfinite(v):
            return "#cccccc"
        t = 0.0 if vmax <= 0 else v / vmax
        shade = int(round(235 - 200 * t))
        return f"#{shade:02x}{shade:02x}ff"

    def edges(c):
        if len(c) == 1:
            return [c[0] - 0.5, c[0] + 0.5]
        mids = [(c[i] + c[i + 1]) / 2 for i in range(len(c) - 1)]
        return [c[0] - (mids[0] - c[0])] + mids + [c[-1] + (c[-1] - mids[-1])]

    ex, ey = edges(xs), edges(ys)
    frame.x0, frame.x1 = ex[0], ex[-1]
    frame.y0, frame.y1 = ey[0], ey[-1]
    cells = []
    for j in range(len(ys)):
        for i in range(len(xs)):
            X0, X1 = frame.px(ex[i]), frame.px(ex[i + 1])
            Y0, Y1 = frame.py(ey[j + 1]), frame.py(ey[j])
            cells.append(f'<rect x="{_fmt(X0)}" y="{_fmt(Y0)}" width="{_fmt(X1 - X0)}" '
                         f'height="{_fmt(Y1 - Y0)}" fill="{colour(vals[j, i])}"/>')
    body = cells + _axes(frame, title, xlabel, ylabel, width - 90, height)
    for k, lev in enumerate(levels):
        y = frame.top + 18 * k
        body.append(f'<rect x="{width - 80}" y="{y}" width="14" height="14" fill="{colour(lev)}" '
                    'stroke="#000"/>')
        body.append(f'<text x="{width - 60}" y="{y + 11}" font-size="11">{lev}</text>')
    return _document(body, width, height)
