"""Evaluation figures: per-class metric boxplots (SVG) and tile overlays.

SVG is generated directly (no plotting library) so output bytes are a pure
function of the input table: fixed canvas, fixed class order, axis on the
0-100 presentation scale, coordinates formatted to two decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyResults, EmptyValues, MissingMetric, ShapeMismatch
from .mask_codec import STILS, STROMAL, SUPERCLASS_NAMES, TUMOR, ClassMap
from .metrics import METRIC_NAMES, ResultRow

OVERLAY_PALETTE = {
    TUMOR: (255, 0, 0),
    STROMAL: (0, 255, 0),
    STILS: (0, 0, 255),
}

_CLASS_FILL = {
    "FOV": "#9e9e9e",
    "TUMOR": "#d62728",
    "STROMAL": "#2ca02c",
    "STILS": "#1f77b4",
}


@dataclass
class BoxplotSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_lo: float
    whisker_hi: float
    outliers: list[float]


def boxplot_summary(values: list[float]) -> BoxplotSummary:
    """Five-number summary with linearly interpolated quartiles and
    1.5 IQR whiskers clipped to the data; points beyond are outliers."""
    if not values:
        raise EmptyValues("boxplot needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    q1, median, q3 = np.percentile(arr, [25, 50, 75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisker_lo = float(inside.min()) if inside.size else float(q1)
    whisker_hi = float(inside.max()) if inside.size else float(q3)
    outliers = sorted(float(v) for v in arr[(arr < whisker_lo) | (arr > whisker_hi)])
    return BoxplotSummary(
        minimum=float(arr.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(arr.max()),
        whisker_lo=whisker_lo,
        whisker_hi=whisker_hi,
        outliers=outliers,
    )


_W, _H = 420, 300
_X0, _X1 = 50.0, 404.0
_Y_TOP, _Y_BOT = 24.0, 264.0


def _y(value: float) -> float:
    return _Y_BOT - (value / 100.0) * (_Y_BOT - _Y_TOP)


def _svg_boxplot(metric: str, per_class: list[tuple[str, BoxplotSummary]]) -> str:
    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">'
    )
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{(_X0 + _X1) / 2:.2f}" y="15" text-anchor="middle" '
        f'font-size="13">{metric.upper()} per class (0-100)</text>'
    )
    for tick in range(0, 101, 20):
        y = _y(tick)
        parts.append(
            f'<line x1="{_X0:.2f}" y1="{y:.2f}" x2="{_X1:.2f}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_X0 - 6:.2f}" y="{y + 4:.2f}" text-anchor="end">{tick}</text>'
        )
    parts.append(
        f'<line x1="{_X0:.2f}" y1="{_Y_TOP:.2f}" x2="{_X0:.2f}" y2="{_Y_BOT:.2f}" '
        f'stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_X0:.2f}" y1="{_Y_BOT:.2f}" x2="{_X1:.2f}" y2="{_Y_BOT:.2f}" '
        f'stroke="#333333" stroke-width="1"/>'
    )
    slot = (_X1 - _X0) / max(len(per_class), 1)
    half = min(20.0, slot * 0.3)
    for i, (name, box) in enumerate(per_class):
        cx = _X0 + (i + 0.5) * slot
        color = _CLASS_FILL.get(name, "#777777")
        for lo, hi in ((box.whisker_lo, box.q1), (box.q3, box.whisker_hi)):
            parts.append(
                f'<line x1="{cx:.2f}" y1="{_y(lo):.2f}" x2="{cx:.2f}" y2="{_y(hi):.2f}" '
                f'stroke="#333333" stroke-width="1"/>'
            )
        for w in (box.whisker_lo, box.whisker_hi):
            parts.append(
                f'<line x1="{cx - half / 2:.2f}" y1="{_y(w):.2f}" '
                f'x2="{cx + half / 2:.2f}" y2="{_y(w):.2f}" stroke="#333333" stroke-width="1"/>'
            )
        top, bot = _y(box.q3), _y(box.q1)
        parts.append(
            f'<rect x="{cx - half:.2f}" y="{top:.2f}" width="{2 * half:.2f}" '
            f'height="{max(bot - top, 0.0):.2f}" fill="{color}" fill-opacity="0.35" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{cx - half:.2f}" y1="{_y(box.median):.2f}" x2="{cx + half:.2f}" '
            f'y2="{_y(box.median):.2f}" stroke="#111111" stroke-width="1.5"/>'
        )
        for v in box.outliers:
            parts.append(
                f'<circle cx="{cx:.2f}" cy="{_y(v):.2f}" r="2.5" fill="none" '
                f'stroke="{color}" stroke-width="1"/>'
            )
        parts.append(
            f'<text x="{cx:.2f}" y="{_Y_BOT + 16:.2f}" text-anchor="middle">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_boxplots(
    rows: list[ResultRow],
    out_dir: str | Path,
    metrics: tuple[str, ...] = METRIC_NAMES,
) -> dict[str, Path]:
    """One boxplot SVG per metric (values scaled to 0-100), fixed class order."""
    if not rows:
        raise EmptyResults("no result rows to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for metric in metrics:
        if metric not in METRIC_NAMES:
            raise MissingMetric(f"results table has no metric {metric!r}")
        per_class = []
        for name in SUPERCLASS_NAMES:
            values = [
                getattr(r.scores, metric) * 100.0 for r in rows if r.class_name == name
            ]
            if values:
                per_class.append((name, boxplot_summary(values)))
        path = out_dir / f"boxplot_{metric}.svg"
        path.write_text(_svg_boxplot(metric, per_class))
        written[metric] = path
    return written


def render_overlay(tile: np.ndarray, pred: ClassMap, alpha: float = 0.4) -> np.ndarray:
    """Blend predicted class colors over the tile; FOV pixels pass through."""
    if tile.shape[:2] != pred.shape:
        raise ShapeMismatch(f"tile {tile.shape[:2]} vs prediction {pred.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    out = tile.astype(np.float64).copy()
    for cls, color in OVERLAY_PALETTE.items():
        hit = pred == cls
        out[hit] = (1.0 - alpha) * tile[hit] + alpha * np.asarray(color, dtype=np.float64)
    return out.astype(np.uint8)
