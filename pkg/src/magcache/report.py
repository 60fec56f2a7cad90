"""CSV and SVG emission for statistics and sweeps."""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from typing import Iterable, Sequence

from .stats import MagnitudeStats

STATS_COLUMNS = ("step", "gamma", "sigma", "cos_dist")
SWEEP_COLUMNS = ("delta", "K", "computed_steps", "speedup", "psnr", "ssim", "mse")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def stats_csv(stats: MagnitudeStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for step, g, s, d in stats.rows():
        w.writerow([step, fmt(g), fmt(s), fmt(d)])
    return buf.getvalue()


def sweep_csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for delta, k, computed, spd, p, s, m in rows:
        w.writerow([delta if isinstance(delta, str) else repr(float(delta)), k, computed, fmt(spd), fmt(p), fmt(s), fmt(m)])
    return buf.getvalue()


_SERIES = (("gamma", "average magnitude ratio", "#1f77b4"),
           ("sigma", "magnitude ratio variability", "#d62728"),
           ("cos_dist", "residual cosine distance", "#2ca02c"))


def stats_svg(stats: MagnitudeStats, width: int = 960, panel_height: int = 240) -> str:
    """Three stacked line charts, one per statistic, as a standalone SVG document."""
    pad = 40
    height = panel_height * len(_SERIES)
    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(width),
        "height": str(height),
        "viewBox": f"0 0 {width} {height}",
    })
    n = len(stats.gamma)
    for p, (attr, title, color) in enumerate(_SERIES):
        ys = [float(v) for v in getattr(stats, attr)]
        top = p * panel_height
        lo, hi = min(ys), max(ys)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        x0, x1 = pad, width - pad
        y0, y1 = top + panel_height - pad, top + pad
        g = ET.SubElement(svg, "g", {"id": attr})
        label = ET.SubElement(g, "text", {"x": str(pad), "y": str(top + pad - 12), "font-size": "14"})
        label.text = f"{title} ({fmt(lo)[:8]} .. {fmt(hi)[:8]})"
        ET.SubElement(g, "rect", {"x": str(x0), "y": str(y1), "width": str(x1 - x0),
                                  "height": str(y0 - y1), "fill": "none", "stroke": "#999"})
        pts = []
        for i, y in enumerate(ys):
            px = x0 + (x1 - x0) * (i / (n - 1) if n > 1 else 0.0)
            py = y0 - (y0 - y1) * (y - lo) / (hi - lo)
            pts.append(f"{px:.3f},{py:.3f}")
        ET.SubElement(g, "polyline", {"points": " ".join(pts), "fill": "none",
                                      "stroke": color, "stroke-width": "2"})
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"
