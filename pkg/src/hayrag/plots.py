"""Hand-rolled SVG emitters.

Matplotlib embeds dates and random ids in its SVG output; these writers
produce byte-identical files for identical inputs, which the reporting
contract requires. Values are formatted with fixed precision only.
"""

from __future__ import annotations

from pathlib import Path

_COLOR_STOPS = [
    (0.0, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.0, (253, 231, 37)),
]
_GRAY = "#cccccc"


def _lerp_color(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_COLOR_STOPS, _COLOR_STOPS[1:]):
        if t <= t1:
            f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % _COLOR_STOPS[-1][1]


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _text(x, y, s, size=11, anchor="middle", fill="#000000") -> str:
    return (
        f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" font-family="sans-serif" '
        f'text-anchor="{anchor}" fill="{fill}">{_esc(s)}</text>'
    )


def svg_heatmap(
    row_labels: list[str],
    col_labels: list[str],
    values,  # 2D nested list of float | None
    path,
    title: str = "",
    vmin: float = 0.0,
    vmax: float = 1.0,
) -> None:
    cell = 46
    left, top = 90, 50
    rows, cols = len(row_labels), len(col_labels)
    legend_w = 70
    width = left + cols * cell + legend_w + 30
    height = top + rows * cell + 60
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(_text(left + cols * cell / 2, 24, title, size=14))
    for r in range(rows):
        parts.append(_text(left - 8, top + r * cell + cell / 2 + 4, row_labels[r], anchor="end"))
        for c in range(cols):
            v = values[r][c]
            x, y = left + c * cell, top + r * cell
            if v is None:
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    f'fill="{_GRAY}" stroke="#ffffff"/>'
                )
                parts.append(_text(x + cell / 2, y + cell / 2 + 4, "E"))
            else:
                t = (v - vmin) / (vmax - vmin) if vmax > vmin else 0.0
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    f'fill="{_lerp_color(t)}" stroke="#ffffff"/>'
                )
                shade = "#000000" if t > 0.55 else "#ffffff"
                parts.append(_text(x + cell / 2, y + cell / 2 + 4, f"{v:.2f}", size=10, fill=shade))
    for c in range(cols):
        parts.append(_text(left + c * cell + cell / 2, top + rows * cell + 16, col_labels[c]))
    # color scale
    lx = left + cols * cell + 24
    strips = 40
    strip_h = rows * cell / strips
    for s in range(strips):
        t = 1.0 - (s + 0.5) / strips
        parts.append(
            f'<rect x="{lx}" y="{top + s * strip_h:.1f}" width="16" height="{strip_h + 0.5:.1f}" '
            f'fill="{_lerp_color(t)}"/>'
        )
    parts.append(_text(lx + 22, top + 10, f"{vmax:.2f}", size=10, anchor="start"))
    parts.append(_text(lx + 22, top + rows * cell, f"{vmin:.2f}", size=10, anchor="start"))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def svg_line_chart(
    x_labels: list[str],
    series: dict[str, list[tuple[float, float]]],  # name -> [(mean, std), ...]
    path,
    title: str = "",
    y_label: str = "accuracy",
) -> None:
    left, top, plot_w, plot_h = 70, 40, 460, 280
    width, height = left + plot_w + 40, top + plot_h + 70
    n = len(x_labels)
    xs = [left + plot_w / 2] if n == 1 else [left + i * plot_w / (n - 1) for i in range(n)]
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def ypix(v: float) -> float:
        return top + (1.0 - min(max(v, 0.0), 1.0)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(_text(left + plot_w / 2, 20, title, size=14))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = ypix(frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(_text(left - 8, y + 4, f"{frac:.2f}", size=10, anchor="end"))
    for i, lbl in enumerate(x_labels):
        parts.append(_text(xs[i], top + plot_h + 18, lbl, size=10))
    parts.append(_text(left + plot_w / 2, top + plot_h + 40, "haystack size", size=11))
    parts.append(_text(16, top + plot_h / 2, y_label, size=11, anchor="middle"))

    for k, (name, points) in enumerate(sorted(series.items())):
        color = palette[k % len(palette)]
        coords = " ".join(f"{xs[i]:.1f},{ypix(m):.1f}" for i, (m, _) in enumerate(points))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for i, (m, s) in enumerate(points):
            parts.append(
                f'<line x1="{xs[i]:.1f}" y1="{ypix(m - s):.1f}" x2="{xs[i]:.1f}" '
                f'y2="{ypix(m + s):.1f}" stroke="{color}" stroke-width="1.5"/>'
            )
            parts.append(
                f'<circle cx="{xs[i]:.1f}" cy="{ypix(m):.1f}" r="3" fill="{color}"/>'
            )
        parts.append(_text(left + plot_w + 6, top + 14 + 16 * k, name, size=10, anchor="start", fill=color))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
