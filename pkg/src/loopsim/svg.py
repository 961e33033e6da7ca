"""Self-contained SVG line charts for per-round metric series.

Text-only output (no fonts, scripts, or external assets) so plots can be
regression-tested by string comparison and parsed as XML.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

__all__ = ["Series", "Panel", "render_chart"]

# stroke color + dash pairs cycled per series within a panel
_STYLES = (
    ("#1f77b4", None),
    ("#d62728", "6,3"),
    ("#2ca02c", "2,2"),
    ("#9467bd", "8,3,2,3"),
    ("#ff7f0e", "4,2"),
    ("#8c564b", "1,3"),
)

_PANEL_W = 380
_PANEL_H = 260
_MARGIN_L = 58
_MARGIN_R = 16
_MARGIN_T = 34
_MARGIN_B = 46


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple
    ys: tuple

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or not self.xs:
            raise ValueError("series needs equal-length non-empty xs/ys")


@dataclass(frozen=True)
class Panel:
    title: str
    series: tuple

    def __post_init__(self):
        if not self.series:
            raise ValueError("panel needs at least one series")


def _nice_step(raw: float) -> float:
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if mult * mag >= raw:
            return mult * mag
    return 10.0 * mag


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if lo == hi:
        pad = abs(lo) * 0.05 or 0.5
        lo, hi = lo - pad, hi + pad
    step = _nice_step((hi - lo) / max(1, target - 1))
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _data_range(series) -> tuple[float, float, float, float]:
    xs = [x for s in series for x in s.xs]
    ys = [y for s in series for y in s.ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_lo == y_hi:
        pad = abs(y_lo) * 0.05 or 0.5
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        pad = (y_hi - y_lo) * 0.05
        y_lo, y_hi = y_lo - pad, y_hi + pad
    return x_lo, x_hi, y_lo, y_hi


def _render_panel(panel: Panel, ox: float, oy: float, x_label: str, y_label: str) -> list[str]:
    plot_x = ox + _MARGIN_L
    plot_y = oy + _MARGIN_T
    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_h = _PANEL_H - _MARGIN_T - _MARGIN_B
    x_lo, x_hi, y_lo, y_hi = _data_range(panel.series)

    def sx(x: float) -> float:
        return plot_x + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return plot_y + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<rect x="{plot_x:.2f}" y="{plot_y:.2f}" width="{plot_w:.2f}" '
        f'height="{plot_h:.2f}" fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{ox + _PANEL_W / 2:.2f}" y="{oy + 20:.2f}" text-anchor="middle" '
        f'font-size="13" font-family="monospace">{escape(panel.title)}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        px = sx(t)
        out.append(
            f'<line x1="{px:.2f}" y1="{plot_y + plot_h:.2f}" x2="{px:.2f}" '
            f'y2="{plot_y + plot_h + 4:.2f}" stroke="#333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{plot_y + plot_h + 16:.2f}" text-anchor="middle" '
            f'font-size="10" font-family="monospace">{_fmt(t)}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        py = sy(t)
        out.append(
            f'<line x1="{plot_x - 4:.2f}" y1="{py:.2f}" x2="{plot_x:.2f}" '
            f'y2="{py:.2f}" stroke="#333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{plot_x - 7:.2f}" y="{py + 3:.2f}" text-anchor="end" '
            f'font-size="10" font-family="monospace">{_fmt(t)}</text>'
        )
    out.append(
        f'<text x="{plot_x + plot_w / 2:.2f}" y="{oy + _PANEL_H - 8:.2f}" '
        f'text-anchor="middle" font-size="11" font-family="monospace">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="{ox + 14:.2f}" y="{plot_y + plot_h / 2:.2f}" text-anchor="middle" '
        f'font-size="11" font-family="monospace" '
        f'transform="rotate(-90 {ox + 14:.2f} {plot_y + plot_h / 2:.2f})">{escape(y_label)}</text>'
    )

    for i, s in enumerate(panel.series):
        color, dash = _STYLES[i % len(_STYLES)]
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        if len(s.xs) >= 2:
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(s.xs, s.ys))
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"{dash_attr}/>'
            )
        for x, y in zip(s.xs, s.ys):
            out.append(
                f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="{color}"/>'
            )

    legend_y = plot_y + 12
    for i, s in enumerate(panel.series):
        color, dash = _STYLES[i % len(_STYLES)]
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        ly = legend_y + i * 14
        lx = plot_x + plot_w - 120
        out.append(
            f'<line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 22:.2f}" y2="{ly:.2f}" '
            f'stroke="{color}" stroke-width="1.5"{dash_attr}/>'
        )
        out.append(
            f'<text x="{lx + 27:.2f}" y="{ly + 3:.2f}" font-size="10" '
            f'font-family="monospace">{escape(s.label)}</text>'
        )
    return out


def render_chart(panels, y_label: str, x_label: str = "round") -> str:
    """Panel-grid line chart as a standalone SVG 1.1 document string."""
    panels = tuple(panels)
    if not panels:
        raise ValueError("need at least one panel")
    ncols = 1 if len(panels) == 1 else 2
    nrows = (len(panels) + ncols - 1) // ncols
    width = ncols * _PANEL_W
    height = nrows * _PANEL_H
    body = []
    for i, panel in enumerate(panels):
        ox = (i % ncols) * _PANEL_W
        oy = (i // ncols) * _PANEL_H
        body.extend(_render_panel(panel, ox, oy, x_label, y_label))
    inner = "\n".join(body)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f"{inner}\n"
        "</svg>\n"
    )
