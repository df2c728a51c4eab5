"""Minimal deterministic SVG emission for traces, learning curves, and
misclassification scatter plots. CSV/JSON stay the canonical artifacts;
these renderings are derived views with no plotting dependency.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from .beliefs import ClassFrame


def _fmt(value: float) -> str:
    return f"{value:.2f}"


class _Canvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0, dash=None):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{stroke}" stroke-width="{width}"{dash_attr}/>')

    def polyline(self, points, stroke="black", width=1.5):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}"/>')

    def circle(self, x, y, r, fill="black"):
        self.parts.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}" fill="{fill}"/>')

    def cross(self, x, y, size, stroke="red", width=1.5):
        s = size / 2
        self.line(x - s, y - s, x + s, y + s, stroke, width)
        self.line(x - s, y + s, x + s, y - s, stroke, width)

    def rect(self, x, y, w, h, fill="grey", opacity=1.0):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{fill}" fill-opacity="{opacity}"/>')

    def text(self, x, y, content, size=11, anchor="start", fill="black"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}" '
            f'fill="{fill}">{content}</text>')

    def save(self, path: str | Path) -> None:
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts) + "\n", encoding="utf-8")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def plot_trace(rows, path: str | Path, title: str = "Velocity trace") -> None:
    """Requested (orange) vs scaled (blue) rpm over time with red crosses
    at high-entropy ticks."""
    width, height = 820, 320
    margin_l, margin_r, margin_t, margin_b = 60, 20, 36, 40
    canvas = _Canvas(width, height)
    canvas.text(width / 2, 20, title, size=13, anchor="middle")
    if rows:
        times = [r.time_s for r in rows]
        requested = [r.requested_rpm for r in rows]
        scaled = [r.scaled_rpm for r in rows]
        t_hi = max(times) or 1.0
        rpm_hi = max(requested + [1.0]) * 1.1
        xs = _scale(times, 0, t_hi, margin_l, width - margin_r)
        y_req = _scale(requested, 0, rpm_hi, height - margin_b, margin_t)
        y_sca = _scale(scaled, 0, rpm_hi, height - margin_b, margin_t)
        canvas.polyline(list(zip(xs, y_req)), stroke="orange", width=1.6)
        canvas.polyline(list(zip(xs, y_sca)), stroke="steelblue", width=1.6)
        for x, y, r in zip(xs, y_sca, rows):
            if r.high_entropy_flag:
                canvas.cross(x, y, 7, stroke="red")
        canvas.text(margin_l, height - 10,
                    f"0..{t_hi:.1f} s | orange: requested rpm, blue: scaled rpm,"
                    f" red x: high entropy", size=10)
    canvas.line(margin_l, height - margin_b, width - margin_r, height - margin_b)
    canvas.line(margin_l, margin_t, margin_l, height - margin_b)
    canvas.save(path)


def plot_al_curves(run_logs: dict[str, list], path: str | Path,
                   title: str = "Active learning") -> None:
    """Overall accuracy and per-class accuracy/entropy panels per model.

    `run_logs` maps a model label to its list of RoundRecord; grey bars in
    the per-class panels show labeled counts per round.
    """
    any_log = next(iter(run_logs.values()))
    frame_size = len(any_log[0].per_class_acc)
    panel_w, panel_h, gap = 230, 170, 18
    cols = 4
    n_panels = 1 + 2 * frame_size
    rows_count = (n_panels + cols - 1) // cols
    width = cols * (panel_w + gap) + gap
    height = rows_count * (panel_h + gap) + gap + 30
    canvas = _Canvas(width, height)
    canvas.text(width / 2, 18, title, size=13, anchor="middle")
    colors = {"rsnn": "steelblue", "softmax": "orange"}

    max_labeled = max(max(r.labeled_per_class) or 1
                      for log in run_logs.values() for r in log) or 1

    def panel_origin(idx: int) -> tuple[float, float]:
        row, col = divmod(idx, cols)
        return gap + col * (panel_w + gap), 30 + gap + row * (panel_h + gap)

    def draw_panel(idx: int, label: str, series: dict[str, list[float]],
                   y_hi: float, bars: Optional[dict[str, list[int]]] = None):
        ox, oy = panel_origin(idx)
        canvas.rect(ox, oy, panel_w, panel_h, fill="#f7f7f7")
        canvas.text(ox + panel_w / 2, oy + 13, label, size=10, anchor="middle")
        plot_lo_x, plot_hi_x = ox + 8, ox + panel_w - 8
        plot_lo_y, plot_hi_y = oy + panel_h - 18, oy + 22
        if bars:
            first = next(iter(bars.values()))
            n = len(first)
            for i, count in enumerate(first):
                bx = plot_lo_x + i / max(1, n - 1) * (plot_hi_x - plot_lo_x)
                bh = count / max_labeled * (plot_lo_y - plot_hi_y)
                canvas.rect(bx - 4, plot_lo_y - bh, 8, bh,
                            fill="#c8c8c8", opacity=0.8)
        for model_label, values in series.items():
            n = len(values)
            xs = [plot_lo_x + i / max(1, n - 1) * (plot_hi_x - plot_lo_x)
                  for i in range(n)]
            ys = [plot_lo_y - min(v, y_hi) / y_hi * (plot_lo_y - plot_hi_y)
                  for v in values]
            canvas.polyline(list(zip(xs, ys)),
                            stroke=colors.get(model_label, "black"), width=1.4)

    draw_panel(0, "overall accuracy",
               {m: [r.test_acc for r in log] for m, log in run_logs.items()},
               1.0)
    for cls in range(frame_size):
        draw_panel(1 + cls, f"acc class {cls}",
                   {m: [r.per_class_acc[cls] for r in log]
                    for m, log in run_logs.items()},
                   1.0,
                   bars={m: [r.labeled_per_class[cls] for r in log]
                         for m, log in run_logs.items()})
    for cls in range(frame_size):
        draw_panel(1 + frame_size + cls, f"entropy class {cls}",
                   {m: [r.per_class_entropy[cls] for r in log]
                    for m, log in run_logs.items()},
                   3.0)
    canvas.save(path)


def plot_misclassifications(records, frame: ClassFrame,
                            path: str | Path) -> None:
    """Scatter of true classes (black dots) vs nearest-in-top-set
    predictions (crosses, orange low / pink high uncertainty), with dashed
    lines joining each pair."""
    width, height = 820, 360
    margin_l, margin_r = 70, 30
    canvas = _Canvas(width, height)
    canvas.text(width / 2, 20, "Misclassifications: true vs nearest in top set",
                size=13, anchor="middle")
    angles = frame.angles_deg
    lo, hi = min(angles) - 10, max(angles) + 10

    def x_for(angle: float) -> float:
        return margin_l + (angle - lo) / (hi - lo) * (width - margin_l - margin_r)

    axis_y = height - 60
    canvas.line(margin_l, axis_y, width - margin_r, axis_y)
    for name, angle in zip(frame.names, angles):
        canvas.line(x_for(angle), axis_y - 3, x_for(angle), axis_y + 3)
        canvas.text(x_for(angle), axis_y + 16, name, size=9, anchor="middle")

    n = len(records)
    for i, rec in enumerate(records):
        y = 50 + (i / max(1, n - 1)) * (axis_y - 80) if n > 1 else 120.0
        x_true = x_for(frame.angles_deg[frame.index(rec.true_class)])
        x_near = x_for(frame.angles_deg[frame.index(rec.nearest_in_top_set)])
        canvas.line(x_true, y, x_near, y, stroke="grey", width=0.8, dash="4,3")
        canvas.circle(x_true, y, 3.0, fill="black")
        canvas.cross(x_near, y, 8,
                     stroke="deeppink" if rec.high_uncertainty else "orange")
    canvas.text(margin_l, height - 14,
                f"{n} misclassified samples; pink: entropy &gt; 2 bits", size=10)
    canvas.save(path)
