"""Hand-emitted SVG charts; no plotting dependency.

Fixed 800x480 viewport with 10% margins. The plot group carries data-*
attributes declaring the data-to-pixel transform so a reader can recompute
every plotted coordinate from the source values.
"""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

from .report import SweepReport, atomic_write_text
from .sensitivity import LayerErrorRecord

WIDTH, HEIGHT = 800, 480
MARGIN_X, MARGIN_Y = WIDTH * 0.10, HEIGHT * 0.10  # 10% margins
PLOT_X0, PLOT_X1 = MARGIN_X, WIDTH - MARGIN_X
PLOT_Y0, PLOT_Y1 = MARGIN_Y, HEIGHT - MARGIN_Y

SERIES_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")
PARETO_LINE_COLOR = "#555555"


class _Scale:
    """Affine data -> pixel map; a degenerate domain pins to the midpoint."""

    def __init__(self, dmin: float, dmax: float, pmin: float, pmax: float):
        self.dmin, self.dmax, self.pmin, self.pmax = dmin, dmax, pmin, pmax

    def __call__(self, v: float) -> float:
        if self.dmax == self.dmin:
            return (self.pmin + self.pmax) / 2.0
        t = (v - self.dmin) / (self.dmax - self.dmin)
        return self.pmin + t * (self.pmax - self.pmin)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _SvgDoc:
    def __init__(self, title: str):
        self.parts: list[str] = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            f'<title>{escape(title)}</title>',
        ]

    def open_group(self, **attrs):
        rendered = " ".join(f"{k.replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items())
        self.parts.append(f"<g {rendered}>")

    def close_group(self):
        self.parts.append("</g>")

    def line(self, x1, y1, x2, y2, stroke, **attrs):
        extra = "".join(f' {k.replace("_", "-")}={quoteattr(str(v))}' for k, v in attrs.items())
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}"{extra}/>'
        )

    def polyline(self, points, stroke, **attrs):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        extra = "".join(f' {k.replace("_", "-")}={quoteattr(str(v))}' for k, v in attrs.items())
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}"{extra}/>')

    def circle(self, cx, cy, r, fill, **attrs):
        extra = "".join(f' {k.replace("_", "-")}={quoteattr(str(v))}' for k, v in attrs.items())
        self.parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{r}" fill="{fill}"{extra}/>')

    def rect(self, x, y, w, h, fill, **attrs):
        extra = "".join(f' {k.replace("_", "-")}={quoteattr(str(v))}' for k, v in attrs.items())
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="{fill}"{extra}/>'
        )

    def text(self, x, y, content, size=12, anchor="start", **attrs):
        extra = "".join(f' {k.replace("_", "-")}={quoteattr(str(v))}' for k, v in attrs.items())
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}"{extra}>{escape(str(content))}</text>'
        )

    def to_xml(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _axes(doc: _SvgDoc, x_label: str, y_label: str, x_ticks, y_ticks, xs: _Scale, ys: _Scale):
    doc.line(PLOT_X0, PLOT_Y1, PLOT_X1, PLOT_Y1, "#000000")
    doc.line(PLOT_X0, PLOT_Y0, PLOT_X0, PLOT_Y1, "#000000")
    for tv, tl in x_ticks:
        px = xs(tv)
        doc.line(px, PLOT_Y1, px, PLOT_Y1 + 5, "#000000")
        doc.text(px, PLOT_Y1 + 18, tl, size=10, anchor="middle")
    for tv, tl in y_ticks:
        py = ys(tv)
        doc.line(PLOT_X0 - 5, py, PLOT_X0, py, "#000000")
        doc.text(PLOT_X0 - 8, py + 3, tl, size=10, anchor="end")
    doc.text((PLOT_X0 + PLOT_X1) / 2, HEIGHT - 8, x_label, size=12, anchor="middle")
    doc.text(14, (PLOT_Y0 + PLOT_Y1) / 2, y_label, size=12, anchor="middle",
             transform=f"rotate(-90 14 {(PLOT_Y0 + PLOT_Y1) / 2:.2f})")


def _legend(doc: _SvgDoc, labels: list[str]):
    x = PLOT_X1 - 180
    y = PLOT_Y0 + 8
    for i, label in enumerate(labels):
        doc.rect(x, y + i * 16 - 8, 10, 10, SERIES_COLORS[i % len(SERIES_COLORS)])
        doc.text(x + 16, y + i * 16, label, size=11)


def _plot_group_attrs(x_min, x_max, y_min, y_max) -> dict:
    return {
        "id": "plot-area",
        "data_x_min": x_min, "data_x_max": x_max,
        "data_y_min": y_min, "data_y_max": y_max,
        "data_px_x0": PLOT_X0, "data_px_x1": PLOT_X1,
        "data_px_y0": PLOT_Y1, "data_px_y1": PLOT_Y0,  # y grows upward in data space
    }


def _series(doc: _SvgDoc, name: str, xs_data, ys_data, xs: _Scale, ys: _Scale, color: str):
    points = [(xs(x), ys(y)) for x, y in zip(xs_data, ys_data)]
    if len(points) > 1:
        doc.polyline(points, color, stroke_width=1.5, **{"class": "series", "data_series": name})
    for px, py in points:
        doc.circle(px, py, 3, color, **{"class": "marker", "data_series": name})


def plot_layer_errors(records: list[LayerErrorRecord], path) -> None:
    """Chart of normalized QDQ and executed-model error over layer position."""
    if not records:
        raise ValueError("no layer error records to plot")
    n = len(records)
    x_max = float(max(n - 1, 0))
    xs = _Scale(0.0, x_max, PLOT_X0, PLOT_X1)
    ys = _Scale(0.0, 1.0, PLOT_Y1, PLOT_Y0)
    doc = _SvgDoc("per-layer quantization error")
    doc.open_group(**_plot_group_attrs(0.0, x_max, 0.0, 1.0))
    x_ticks = [(float(i), records[i].node_id) for i in range(n)] if n <= 12 else [
        (float(i), str(i)) for i in range(0, n, max(1, n // 10))
    ]
    _axes(doc, "layer (topological order)", "normalized error", x_ticks,
          [(t / 10.0, f"{t / 10.0:.1f}") for t in range(0, 11, 2)], xs, ys)
    xs_data = [float(i) for i in range(n)]
    _series(doc, "norm_qdq_err", xs_data, [r.norm_qdq_err for r in records], xs, ys, SERIES_COLORS[0])
    _series(doc, "norm_xmodel_err", xs_data, [r.norm_xmodel_err for r in records], xs, ys, SERIES_COLORS[1])
    _legend(doc, ["norm_qdq_err", "norm_xmodel_err"])
    doc.close_group()
    atomic_write_text(doc.to_xml(), path)


def plot_objectives(report: SweepReport, path) -> None:
    """Normalized objectives per variant index, with the top Pareto picks as
    labeled vertical lines."""
    report.validate()
    n_variants = len(report.variants)
    if not n_variants or not report.normalized_objectives:
        raise ValueError("report has no completed variants to plot")
    names = report.metadata.get("objectives", ["top1_mismatch", "size_bytes"])
    x_max = float(n_variants - 1)
    xs = _Scale(0.0, x_max, PLOT_X0, PLOT_X1)
    ys = _Scale(0.0, 100.0, PLOT_Y1, PLOT_Y0)
    doc = _SvgDoc("objectives per selectively quantized variant")
    doc.open_group(**_plot_group_attrs(0.0, x_max, 0.0, 100.0))
    step = max(1, n_variants // 16)
    _axes(doc, "variant index (0 = fully quantized)", "normalized objective (%)",
          [(float(i), str(i)) for i in range(0, n_variants, step)],
          [(float(t), str(t)) for t in range(0, 101, 20)], xs, ys)
    xs_data = [float(v.variant_index) for v in report.variants]
    for m, name in enumerate(names):
        _series(doc, name, xs_data, [row[m] for row in report.normalized_objectives], xs, ys,
                SERIES_COLORS[m % len(SERIES_COLORS)])
    for idx in report.pareto.top_candidates:
        px = xs(float(idx))
        doc.line(px, PLOT_Y0, px, PLOT_Y1, PARETO_LINE_COLOR, stroke_width=1.2,
                 stroke_dasharray="5,3", **{"class": "pareto-line", "data_variant": idx})
        doc.text(px + 3, PLOT_Y0 + 12, f"v{idx}", size=10, **{"class": "pareto-label"})
    _legend(doc, list(names))
    doc.close_group()
    atomic_write_text(doc.to_xml(), path)
