"""Small deterministic SVG chart writer.

Emits scatter, histogram, density and time-series figures as plain SVG text
with fixed number formatting, so identical inputs produce identical bytes.
Scatter points are ``<circle class="pt">`` elements, one per observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

CHART_W, CHART_H = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 20, 36, 48

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _fmt_tick(v: float) -> str:
    return f"{v:.4g}"


class Svg:
    def __init__(self, width: int = CHART_W, height: int = CHART_H):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def line(self, x1, y1, x2, y2, stroke="#333333", width=1.0, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                          f'y2="{_fmt(y2)}" stroke="{stroke}" stroke-width="{width}"{dash_attr}/>')

    def circle(self, cx, cy, r=2.5, fill="#1f77b4", opacity=0.7, cls="pt"):
        self.parts.append(f'<circle class="{cls}" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{r}" '
                          f'fill="{fill}" fill-opacity="{opacity}"/>')

    def rect(self, x, y, w, h, fill="#cccccc", opacity=1.0, stroke="none", cls=None):
        cls_attr = f' class="{cls}"' if cls else ""
        self.parts.append(f'<rect{cls_attr} x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                          f'height="{_fmt(h)}" fill="{fill}" fill-opacity="{opacity}" '
                          f'stroke="{stroke}"/>')

    def polyline(self, points, stroke="#d62728", width=1.5, dash=None):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{dash_attr}/>')

    def text(self, x, y, s, size=12, anchor="start", color="#222222"):
        self.parts.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'font-family="sans-serif" text-anchor="{anchor}" '
                          f'fill="{color}">{s}</text>')

    def to_string(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n'
                f"{body}\n</svg>\n")


@dataclass
class Frame:
    """Plot area mapping data coordinates onto the SVG viewport."""

    svg: Svg
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    left: float = MARGIN_L
    top: float = MARGIN_T

    def __post_init__(self):
        if self.x_hi == self.x_lo:
            self.x_hi = self.x_lo + 1.0
        if self.y_hi == self.y_lo:
            self.y_hi = self.y_lo + 1.0
        self.right = self.svg.width - MARGIN_R
        self.bottom = self.svg.height - MARGIN_B

    def sx(self, v: float) -> float:
        return self.left + (v - self.x_lo) / (self.x_hi - self.x_lo) * (self.right - self.left)

    def sy(self, v: float) -> float:
        return self.bottom - (v - self.y_lo) / (self.y_hi - self.y_lo) * (self.bottom - self.top)

    def axes(self, xlabel="", ylabel="", title="", n_ticks=5):
        s = self.svg
        s.line(self.left, self.bottom, self.right, self.bottom)
        s.line(self.left, self.bottom, self.left, self.top)
        for v in np.linspace(self.x_lo, self.x_hi, n_ticks):
            x = self.sx(v)
            s.line(x, self.bottom, x, self.bottom + 4)
            s.text(x, self.bottom + 18, _fmt_tick(v), size=10, anchor="middle")
        for v in np.linspace(self.y_lo, self.y_hi, n_ticks):
            y = self.sy(v)
            s.line(self.left - 4, y, self.left, y)
            s.text(self.left - 8, y + 3, _fmt_tick(v), size=10, anchor="end")
        if xlabel:
            s.text((self.left + self.right) / 2, self.svg.height - 10, xlabel, anchor="middle")
        if ylabel:
            s.text(14, self.top - 10, ylabel, size=11)
        if title:
            s.text((self.left + self.right) / 2, 18, title, size=13, anchor="middle")


def _pad(lo: float, hi: float, frac: float = 0.06) -> tuple[float, float]:
    span = hi - lo
    if span == 0:
        span = max(abs(hi), 1.0)
    return lo - frac * span, hi + frac * span


def scatter_figure(temps_c, consumption_kwh, fit_summary: dict | None = None,
                   title: str = "") -> str:
    """Temperature-consumption scatter with optional fitted branch lines and
    a one-standard-deviation threshold band."""
    temps = np.asarray(temps_c, dtype=float)
    cons = np.asarray(consumption_kwh, dtype=float)
    svg = Svg()
    fr = Frame(svg, *_pad(temps.min(), temps.max()), *_pad(cons.min(), cons.max()))

    if fit_summary is not None:
        tc = fit_summary["T_c"]["physical"]["mean"]
        tc_sd = fit_summary["T_c"]["physical"]["std"]
        band_lo, band_hi = max(fr.x_lo, tc - tc_sd), min(fr.x_hi, tc + tc_sd)
        svg.rect(fr.sx(band_lo), fr.top, fr.sx(band_hi) - fr.sx(band_lo),
                 fr.bottom - fr.top, fill="#ffd580", opacity=0.5)
        svg.line(fr.sx(tc), fr.top, fr.sx(tc), fr.bottom, stroke="#e08800", width=1.2, dash="4,3")

        def phys_line(slope_kwh_c, bias_kwh_at_0c, lo, hi, color):
            p0 = (fr.sx(lo), fr.sy(bias_kwh_at_0c + slope_kwh_c * lo))
            p1 = (fr.sx(hi), fr.sy(bias_kwh_at_0c + slope_kwh_c * hi))
            svg.polyline([p0, p1], stroke=color, width=2.0)

        for m, (sl, bi) in enumerate(zip(fit_summary["slopes_left"], fit_summary["biases_left"])):
            phys_line(sl["physical"]["mean"], bi["physical"]["mean"], fr.x_lo, tc, PALETTE[m + 1])
        phys_line(fit_summary["slope_right"]["physical"]["mean"],
                  fit_summary["bias"]["physical"]["mean"], tc, fr.x_hi, PALETTE[0])

    for x, y in zip(temps, cons):
        svg.circle(fr.sx(x), fr.sy(y), fill="#555555")
    fr.axes(xlabel="temperature [degC]", ylabel="kWh/day", title=title)
    return svg.to_string()


def histogram_figure(rows, title: str = "", xlabel: str = "slope [kWh/degC]") -> str:
    """Grouped bar chart from (category, bin_low, bin_high, count) rows."""
    rows = list(rows)
    categories = sorted({r[0] for r in rows})
    lo = min(r[1] for r in rows)
    hi = max(r[2] for r in rows)
    max_count = max(r[3] for r in rows) or 1
    svg = Svg()
    fr = Frame(svg, lo, hi, 0, max_count * 1.05)
    n_cat = len(categories)
    for r in rows:
        cat, b_lo, b_hi, count = r
        ci = categories.index(cat)
        w = (fr.sx(b_hi) - fr.sx(b_lo)) / n_cat
        x = fr.sx(b_lo) + ci * w
        y = fr.sy(count)
        svg.rect(x, y, max(w - 1, 1), fr.bottom - y, fill=PALETTE[ci % len(PALETTE)],
                 opacity=0.8, cls="bar")
    for ci, cat in enumerate(categories):
        svg.rect(fr.right - 130, fr.top + 8 + 16 * ci, 10, 10, fill=PALETTE[ci % len(PALETTE)])
        svg.text(fr.right - 115, fr.top + 17 + 16 * ci, cat, size=11)
    fr.axes(xlabel=xlabel, ylabel="households", title=title)
    return svg.to_string()


def _gauss_curve(mean: float, std: float, n: int = 101):
    std = max(std, 1e-9)
    xs = np.linspace(mean - 3.5 * std, mean + 3.5 * std, n)
    ys = np.exp(-0.5 * ((xs - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
    return xs, ys


def posterior_figure(summary: dict, title: str = "") -> str:
    """Density curves of the posterior approximations (physical units)."""
    panels = [("critical temperature [degC]",
               [("T_c", summary["T_c"]["physical"], "#e08800")]),
              ("temperature response [kWh/degC]",
               [(f"mode {m}", e["physical"], PALETTE[m + 1])
                for m, e in enumerate(summary["slopes_left"])]
               + [("upper", summary["slope_right"]["physical"], PALETTE[0])]),
              ("mixture weight",
               [(f"mode {m}", {"mean": summary["omega"]["mean"][m],
                               "std": summary["omega"]["std"][m]}, PALETTE[m + 1])
                for m in range(len(summary["omega"]["mean"]))])]

    panel_h = 150
    svg = Svg(CHART_W, panel_h * len(panels) + 30)
    for pi, (label, curves) in enumerate(panels):
        top = 30 + pi * panel_h
        data = [_gauss_curve(c[1]["mean"], c[1]["std"]) for c in curves]
        x_lo = min(xs[0] for xs, _ in data)
        x_hi = max(xs[-1] for xs, _ in data)
        y_hi = max(ys.max() for _, ys in data)
        fr = Frame(svg, x_lo, x_hi, 0.0, y_hi * 1.05, top=top + 10)
        fr.bottom = top + panel_h - 26
        for (name, _, color), (xs, ys) in zip(curves, data):
            fr_pts = [(fr.sx(x), fr.sy(y)) for x, y in zip(xs, ys)]
            svg.polyline(fr_pts, stroke=color, width=1.8)
        svg.line(fr.left, fr.bottom, fr.right, fr.bottom)
        for v in np.linspace(x_lo, x_hi, 5):
            svg.line(fr.sx(v), fr.bottom, fr.sx(v), fr.bottom + 4)
            svg.text(fr.sx(v), fr.bottom + 16, _fmt_tick(v), size=10, anchor="middle")
        svg.text(fr.left, top + 8, label, size=11)
    if title:
        svg.text(CHART_W / 2, 16, title, size=13, anchor="middle")
    return svg.to_string()


def timeseries_figure(dates: list[_date], consumption_kwh, heating_kwh, temps_c,
                      smooth_window: int | None = None, title: str = "") -> str:
    """Consumption/heating and temperature over time, optionally smoothed."""
    from .disagg import moving_average

    cons = np.asarray(consumption_kwh, dtype=float)
    heat = np.asarray(heating_kwh, dtype=float)
    temps = np.asarray(temps_c, dtype=float)
    if smooth_window and smooth_window > 1:
        cons = moving_average(cons, smooth_window, dates)
        heat = moving_average(heat, smooth_window, dates)
        temps = moving_average(temps, smooth_window, dates)

    x = np.array([d.toordinal() for d in dates], dtype=float)
    svg = Svg(CHART_W, 480)

    fr1 = Frame(svg, x.min(), x.max(), *_pad(min(0.0, heat.min()), cons.max()))
    fr1.bottom = 230
    svg.polyline([(fr1.sx(a), fr1.sy(b)) for a, b in zip(x, cons)], stroke=PALETTE[0], width=1.4)
    svg.polyline([(fr1.sx(a), fr1.sy(b)) for a, b in zip(x, heat)], stroke=PALETTE[1], width=1.4)
    svg.line(fr1.left, fr1.bottom, fr1.right, fr1.bottom)
    svg.line(fr1.left, fr1.bottom, fr1.left, fr1.top)
    for v in np.linspace(fr1.y_lo, fr1.y_hi, 4):
        svg.text(fr1.left - 8, fr1.sy(v) + 3, _fmt_tick(v), size=10, anchor="end")
    svg.text(14, fr1.top - 10, "kWh/day (total, heating)", size=11)

    fr2 = Frame(svg, x.min(), x.max(), *_pad(temps.min(), temps.max()), top=260)
    svg.polyline([(fr2.sx(a), fr2.sy(b)) for a, b in zip(x, temps)], stroke=PALETTE[2], width=1.4)
    svg.line(fr2.left, fr2.bottom, fr2.right, fr2.bottom)
    svg.line(fr2.left, fr2.bottom, fr2.left, fr2.top)
    for v in np.linspace(fr2.y_lo, fr2.y_hi, 4):
        svg.text(fr2.left - 8, fr2.sy(v) + 3, _fmt_tick(v), size=10, anchor="end")
    svg.text(14, 250, "temperature [degC]", size=11)

    ticks = np.linspace(x.min(), x.max(), 6)
    for v in ticks:
        label = _date.fromordinal(int(v)).isoformat()
        svg.line(fr2.sx(v), fr2.bottom, fr2.sx(v), fr2.bottom + 4)
        svg.text(fr2.sx(v), fr2.bottom + 16, label, size=9, anchor="middle")
    if title:
        svg.text(CHART_W / 2, 16, title, size=13, anchor="middle")
    return svg.to_string()
