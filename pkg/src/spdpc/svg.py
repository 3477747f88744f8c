"""Line plots as standalone SVG files, with no plotting dependency.

Enough for training curves and trajectory fans: shared axes, tick labels,
a small color cycle and an optional legend.  Output is built with
ElementTree, so every file is well-formed XML by construction.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 34, 46

TEXT = {"font-family": "sans-serif", "font-size": "11"}


def _el(parent, tag, text=None, **attrs):
    node = ET.SubElement(parent, tag, {k: str(v) for k, v in attrs.items()})
    if text is not None:
        node.text = str(text)
    return node


def _bounds(series):
    xs = np.concatenate([np.asarray(x, dtype=np.float64) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=np.float64) for _, _, y in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.04 * (y_hi - y_lo)
    return x_lo, x_hi, y_lo - pad, y_hi + pad


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def plot_series(path, series, title="", x_label="", y_label="",
                opacity=1.0, legend=True) -> None:
    """Write polylines for ``series`` = [(label, xs, ys), ...] to ``path``.

    Labels may repeat (e.g. one label per trajectory fan); the legend and
    color cycle key on the first occurrence of each label.  ``opacity``
    applies to every line, which keeps dense fans readable.
    """
    if not series:
        raise ValueError("nothing to plot")
    x_lo, x_hi, y_lo, y_hi = _bounds(series)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h

    root = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(WIDTH), "height": str(HEIGHT),
        "viewBox": f"0 0 {WIDTH} {HEIGHT}",
    })
    _el(root, "rect", x=0, y=0, width=WIDTH, height=HEIGHT, fill="white")
    if title:
        _el(root, "text", text=title, x=WIDTH // 2, y=20,
            **{**TEXT, "text-anchor": "middle", "font-size": "14"})

    axis = {"stroke": "#333333", "stroke-width": "1"}
    _el(root, "line", x1=MARGIN_L, y1=MARGIN_T, x2=MARGIN_L,
        y2=HEIGHT - MARGIN_B, **axis)
    _el(root, "line", x1=MARGIN_L, y1=HEIGHT - MARGIN_B,
        x2=WIDTH - MARGIN_R, y2=HEIGHT - MARGIN_B, **axis)

    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        _el(root, "line", x1=f"{px(xv):.2f}", y1=HEIGHT - MARGIN_B,
            x2=f"{px(xv):.2f}", y2=HEIGHT - MARGIN_B + 5, **axis)
        _el(root, "text", text=_fmt(xv), x=f"{px(xv):.2f}",
            y=HEIGHT - MARGIN_B + 18, **TEXT, **{"text-anchor": "middle"})
        _el(root, "line", x1=MARGIN_L - 5, y1=f"{py(yv):.2f}", x2=MARGIN_L,
            y2=f"{py(yv):.2f}", **axis)
        _el(root, "text", text=_fmt(yv), x=MARGIN_L - 8, y=f"{py(yv) + 4:.2f}",
            **TEXT, **{"text-anchor": "end"})

    if x_label:
        _el(root, "text", text=x_label, x=MARGIN_L + plot_w // 2, y=HEIGHT - 8,
            **{**TEXT, "text-anchor": "middle", "font-size": "12"})
    if y_label:
        mid = MARGIN_T + plot_h // 2
        _el(root, "text", text=y_label, x=16, y=mid,
            transform=f"rotate(-90 16 {mid})",
            **{**TEXT, "text-anchor": "middle", "font-size": "12"})

    seen_labels = {}
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError(f"series {label!r}: x and y must be equal-length vectors")
        if label not in seen_labels:
            seen_labels[label] = PALETTE[len(seen_labels) % len(PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        _el(root, "polyline", points=points, fill="none",
            stroke=seen_labels[label],
            **{"stroke-width": "1.4", "stroke-opacity": f"{opacity:g}"})

    if legend:
        for pos, (label, color) in enumerate(seen_labels.items()):
            y = MARGIN_T + 14 + 16 * pos
            _el(root, "line", x1=WIDTH - MARGIN_R - 120, y1=y - 4,
                x2=WIDTH - MARGIN_R - 96, y2=y - 4, stroke=color,
                **{"stroke-width": "2"})
            _el(root, "text", text=label, x=WIDTH - MARGIN_R - 90, y=y, **TEXT)

    ET.ElementTree(root).write(path, xml_declaration=True, encoding="unicode")
