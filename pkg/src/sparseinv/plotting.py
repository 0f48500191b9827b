"""Static SVG plots of sweep and CT results.

The SVG text is produced directly with fixed-precision coordinates, so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .experiments import mge

__all__ = ["train_gen_svg", "mge_svg", "ct_svg", "emit_plots"]

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 480, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
METHOD_COLOR = {"fbp": "#7f7f7f", "lasso": "#1f77b4", "vg": "#d62728"}
DASH = {"lasso": ' stroke-dasharray="6,4"', "vg": "", "fbp": ' stroke-dasharray="2,3"'}


def _f(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Axes:
    """Maps data to pixels on linear or log10 axes."""

    def __init__(self, xs, ys, xlog=False, ylog=False, square=False):
        self.xlog, self.ylog = xlog, ylog
        x0, x1 = self._range(xs, xlog)
        y0, y1 = self._range(ys, ylog)
        if square:
            x0 = y0 = min(x0, y0)
            x1 = y1 = max(x1, y1)
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    @staticmethod
    def _range(vals, is_log):
        v = np.asarray([x for x in vals if np.isfinite(x) and (x > 0 or not is_log)], dtype=float)
        if v.size == 0:
            return (0.0, 1.0)
        if is_log:
            lo, hi = math.floor(np.log10(v.min())), math.ceil(np.log10(v.max()))
            return (float(lo), float(hi if hi > lo else lo + 1))
        lo, hi = float(v.min()), float(v.max())
        pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.5
        return (lo - pad, hi + pad)

    def px(self, x):
        t = math.log10(x) if self.xlog else x
        return LEFT + (t - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)

    def py(self, y):
        t = math.log10(y) if self.ylog else y
        return HEIGHT - BOTTOM - (t - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)

    def ok(self, x, y):
        return (np.isfinite(x) and np.isfinite(y) and (x > 0 or not self.xlog)
                and (y > 0 or not self.ylog))

    def ticks(self, axis):
        lo, hi, is_log = (self.x0, self.x1, self.xlog) if axis == "x" else (self.y0, self.y1, self.ylog)
        if is_log:
            return [(10.0 ** e, f"1e{e}") for e in range(int(lo), int(hi) + 1)]
        vals = np.linspace(lo, hi, 5)
        return [(float(v), f"{v:.3g}") for v in vals]


def _frame(ax: _Axes, title, xlabel, ylabel):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
        'fill="none" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
        f"{_esc(xlabel)}</text>",
        f'<text x="16" y="{(TOP + HEIGHT - BOTTOM) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(TOP + HEIGHT - BOTTOM) / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for v, label in ax.ticks("x"):
        x = ax.px(v)
        parts.append(f'<line x1="{_f(x)}" y1="{HEIGHT - BOTTOM}" x2="{_f(x)}" '
                     f'y2="{HEIGHT - BOTTOM + 4}" stroke="black"/>')
        parts.append(f'<text x="{_f(x)}" y="{HEIGHT - BOTTOM + 16}" text-anchor="middle">{label}</text>')
    for v, label in ax.ticks("y"):
        y = ax.py(v)
        parts.append(f'<line x1="{LEFT - 4}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="black"/>')
        parts.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{label}</text>')
    return parts


def _polyline(ax, xs, ys, color, dash=""):
    pts = [(x, y) for x, y in zip(xs, ys) if ax.ok(x, y)]
    if not pts:
        return []
    coords = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in pts)
    out = [f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>']
    if len(pts) == 1:
        x, y = pts[0]
        out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="2" fill="{color}"/>')
    return out


def _legend(entries):
    out = []
    for i, (label, color, dash) in enumerate(entries):
        y = TOP + 12 + 14 * i
        out.append(f'<line x1="{WIDTH - RIGHT - 120}" y1="{y}" x2="{WIDTH - RIGHT - 100}" y2="{y}" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{WIDTH - RIGHT - 96}" y="{y + 4}">{_esc(label)}</text>')
    return out


def _write(path, parts):
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    return Path(path)


def train_gen_svg(results, path, title="train vs generalization error"):
    """Log-log train/generalization curves with minimum markers and the diagonal."""
    results = [r for r in results if any(p.valid for p in r.points)]
    if not results:
        raise ValueError("no valid sweep points to plot")
    xs = [p.e_train for r in results for p in r.points if p.valid]
    ys = [p.e_gen for r in results for p in r.points if p.valid]
    ax = _Axes(xs, ys, xlog=True, ylog=True, square=True)
    parts = _frame(ax, title, "train error", "generalization error")
    lo, hi = 10.0 ** ax.x0, 10.0 ** ax.x1
    parts.append(f'<line x1="{_f(ax.px(lo))}" y1="{_f(ax.py(lo))}" x2="{_f(ax.px(hi))}" '
                 f'y2="{_f(ax.py(hi))}" stroke="black" stroke-dasharray="1,3"/>')
    levels = sorted({r.level for r in results})
    legend = []
    for r in results:
        color = PALETTE[levels.index(r.level) % len(PALETTE)]
        pts = [p for p in r.points if p.valid]
        parts += _polyline(ax, [p.e_train for p in pts], [p.e_gen for p in pts], color,
                           DASH.get(r.method, ""))
        best_gen, best_h = mge(r)
        best = next(p for p in pts if p.hyperparam == best_h)
        if ax.ok(best.e_train, best_gen):
            parts.append(f'<circle cx="{_f(ax.px(best.e_train))}" cy="{_f(ax.py(best_gen))}" r="4" '
                         f'fill="{color}" stroke="black"/>')
        legend.append((f"{r.method} {r.bottleneck}={r.level:g}", color, DASH.get(r.method, "")))
    parts += _legend(legend[:12])
    return _write(path, parts)


def mge_svg(results, path, title="minimum generalization error"):
    """MGE against the bottleneck value, one line per method."""
    by_method: dict[str, list] = {}
    for r in results:
        try:
            by_method.setdefault(r.method, []).append((r.level, mge(r)[0]))
        except ValueError:
            log.warning("no valid point for %s at %s=%g; omitted", r.method, r.bottleneck, r.level)
    by_method = {m: sorted(v) for m, v in by_method.items() if v}
    if not by_method:
        raise ValueError("no valid sweep points to plot")
    xs = [x for v in by_method.values() for x, _ in v]
    ys = [y for v in by_method.values() for _, y in v]
    ax = _Axes(xs, ys, ylog=True)
    bottleneck = results[0].bottleneck
    parts = _frame(ax, title, bottleneck, "MGE")
    legend = []
    for method in sorted(by_method):
        v = by_method[method]
        color = METHOD_COLOR.get(method, "black")
        parts += _polyline(ax, [x for x, _ in v], [y for _, y in v], color, DASH.get(method, ""))
        for x, y in v:
            if ax.ok(x, y):
                parts.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3" fill="{color}"/>')
        legend.append((method, color, DASH.get(method, "")))
    parts += _legend(legend)
    return _write(path, parts)


def ct_svg(ct_results, path, title="MSE vs number of angles"):
    """Mean MSE against K with one-standard-deviation error bars."""
    rows = [r for r in ct_results if np.isfinite(r.mse_mean) and r.mse_mean > 0]
    if not rows:
        raise ValueError("no CT results to plot")
    lows = [max(r.mse_mean - r.mse_std, r.mse_mean * 0.5) for r in rows]
    highs = [r.mse_mean + r.mse_std for r in rows]
    ax = _Axes([r.k for r in rows], lows + highs, ylog=True)
    parts = _frame(ax, title, "K", "MSE")
    legend = []
    for method in ("fbp", "lasso", "vg"):
        sel = sorted((r for r in rows if r.method == method), key=lambda r: r.k)
        if not sel:
            log.warning("no CT results for %s; omitted", method)
            continue
        color = METHOD_COLOR[method]
        parts += _polyline(ax, [r.k for r in sel], [r.mse_mean for r in sel], color, DASH[method])
        for r in sel:
            x = ax.px(r.k)
            lo = max(r.mse_mean - r.mse_std, r.mse_mean * 0.5)
            parts.append(f'<line x1="{_f(x)}" y1="{_f(ax.py(lo))}" x2="{_f(x)}" '
                         f'y2="{_f(ax.py(r.mse_mean + r.mse_std))}" stroke="{color}"/>')
            parts.append(f'<circle cx="{_f(x)}" cy="{_f(ax.py(r.mse_mean))}" r="3" fill="{color}"/>')
        legend.append((method, color, DASH[method]))
    parts += _legend(legend)
    return _write(path, parts)


def emit_plots(sweeps, ct_results, output_dir, prefix="") -> list[Path]:
    """Write every panel that has data; returns the written paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for method in ("lasso", "vg"):
        sel = [r for r in sweeps if r.method == method]
        if not sel or not any(p.valid for r in sel for p in r.points):
            log.warning("no sweep points for %s; train-gen panel omitted", method)
            continue
        written.append(train_gen_svg(sel, out / f"{prefix}train_gen_{method}.svg",
                                     f"{method}: train vs generalization error"))
    if sweeps:
        try:
            written.append(mge_svg(sweeps, out / f"{prefix}mge.svg"))
        except ValueError:
            log.warning("no valid sweep points; MGE panel omitted")
    if ct_results:
        written.append(ct_svg(ct_results, out / f"{prefix}ct_mse.svg"))
    return written
