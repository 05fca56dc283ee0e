"""Dependency-free SVG line and scatter plots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    yerr: np.ndarray | None = None
    scatter: bool = False


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    width: int = 560
    height: int = 400
    series: list = field(default_factory=list)

    def add(self, label, x, y, yerr=None, scatter=False) -> "Plot":
        self.series.append(Series(label, np.asarray(x, float), np.asarray(y, float),
                                  None if yerr is None else np.asarray(yerr, float), scatter))
        return self

    def _tx(self, v, log):
        return np.log10(v) if log else v

    def render(self) -> str:
        left, right, top, bottom = 70, 20, 36, 50
        pw, ph = self.width - left - right, self.height - top - bottom
        xs, ys = [], []
        for s in self.series:
            ok = np.isfinite(s.x) & np.isfinite(s.y)
            if self.logx:
                ok &= s.x > 0
            if self.logy:
                ok &= s.y > 0
            xs.append(self._tx(s.x[ok], self.logx))
            ys.append(self._tx(s.y[ok], self.logy))
        allx = np.concatenate(xs) if xs else np.zeros(1)
        ally = np.concatenate(ys) if ys else np.zeros(1)
        if allx.size == 0:
            allx = ally = np.zeros(1)
        x0, x1 = float(allx.min()), float(allx.max())
        y0, y1 = float(ally.min()), float(ally.max())
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

        def px(v):
            return left + (v - x0) / (x1 - x0) * pw

        def py(v):
            return top + ph - (v - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" font-family="sans-serif" font-size="12">',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               f'stroke="black"/>',
               f'<text x="{self.width / 2}" y="20" text-anchor="middle" font-size="14">'
               f'{escape(self.title)}</text>',
               f'<text x="{left + pw / 2}" y="{self.height - 10}" text-anchor="middle">'
               f'{escape(self.xlabel)}</text>',
               f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(self.ylabel)}</text>']
        for frac in np.linspace(0, 1, 5):
            xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
            xl = f"{10**xv:.3g}" if self.logx else f"{xv:.3g}"
            yl = f"{10**yv:.3g}" if self.logy else f"{yv:.3g}"
            out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xl}</text>')
            out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yl}</text>')
        for i, (s, xv, yv) in enumerate(zip(self.series, xs, ys)):
            c = COLORS[i % len(COLORS)]
            if s.scatter:
                out += [f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{c}"/>'
                        for a, b in zip(xv, yv)]
            elif xv.size:
                pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xv, yv))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
            if s.yerr is not None and not self.logy:
                for a, b, e in zip(s.x, s.y, s.yerr):
                    if math.isfinite(e):
                        out.append(f'<line x1="{px(self._tx(a, self.logx)):.2f}" '
                                   f'x2="{px(self._tx(a, self.logx)):.2f}" y1="{py(b - e):.2f}" '
                                   f'y2="{py(b + e):.2f}" stroke="{c}"/>')
            ly = top + 14 + 16 * i
            out.append(f'<line x1="{left + 10}" x2="{left + 30}" y1="{ly - 4}" y2="{ly - 4}" '
                       f'stroke="{c}" stroke-width="2"/>')
            out.append(f'<text x="{left + 36}" y="{ly}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
