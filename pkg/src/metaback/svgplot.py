"""Minimal deterministic SVG charts.

Self-contained vector output with no plotting dependencies: identical inputs
always produce byte-identical files. Two chart kinds cover the package's
reporting needs: overlaid line plots (for empirical CDFs) and grouped bar
charts (for cost comparisons).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import EmptyInputError

KINDS = ("cdf_lines", "grouped_bars")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 40, 55


@dataclass(frozen=True)
class Series:
    name: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "xs", tuple(float(v) for v in self.xs))
        object.__setattr__(self, "ys", tuple(float(v) for v in self.ys))
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys must have equal length")
        if len(self.ys) == 0:
            raise EmptyInputError("series must contain at least one point")


def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _axes(x_lo, x_hi, y_lo, y_hi, xlabel, ylabel, x_names=None):
    """Axis frame, ticks, and labels; returns svg fragments plus transforms."""
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(v: float) -> float:
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        return HEIGHT - MARGIN_B - (v - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333333" stroke-width="1"/>'
    ]
    if x_names is None:
        for t in _ticks(x_lo, x_hi):
            x = _fmt(sx(t))
            parts.append(
                f'<line x1="{x}" y1="{HEIGHT - MARGIN_B}" x2="{x}" '
                f'y2="{HEIGHT - MARGIN_B + 5}" stroke="#333333"/>'
            )
            parts.append(
                f'<text x="{x}" y="{HEIGHT - MARGIN_B + 18}" font-size="11" '
                f'text-anchor="middle">{_fmt(t)}</text>'
            )
    else:
        for i, name in enumerate(x_names):
            x = _fmt(sx(i + 0.5))
            parts.append(
                f'<text x="{x}" y="{HEIGHT - MARGIN_B + 18}" font-size="11" '
                f'text-anchor="middle">{name}</text>'
            )
    for t in _ticks(y_lo, y_hi):
        y = _fmt(sy(t))
        parts.append(
            f'<line x1="{MARGIN_L - 5}" y1="{y}" x2="{MARGIN_L}" y2="{y}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{y}" font-size="11" text-anchor="end" '
            f'dominant-baseline="middle">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 12}" font-size="12" '
        f'text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{MARGIN_T + plot_h / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + plot_h / 2})">{ylabel}</text>'
    )
    return parts, sx, sy


def _legend(names: Sequence[str]) -> list[str]:
    parts = []
    for i, name in enumerate(names):
        y = MARGIN_T + 14 + 16 * i
        x = WIDTH - MARGIN_R - 150
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{x + 17}" y="{y + 1}" font-size="11">{name}</text>')
    return parts


def emit_svg_plot(
    series: Sequence[Series],
    kind: str,
    path: str | Path,
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    categories: Sequence[str] | None = None,
) -> None:
    """Write one chart to `path`.

    kind="cdf_lines" draws one polyline per series. kind="grouped_bars" draws
    one bar per (series, category) pair: series i's ys are its per-category
    heights, and `categories` (defaulting to positional names) labels the
    groups.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if len(series) == 0:
        raise EmptyInputError("need at least one series")

    body: list[str] = []
    if kind == "cdf_lines":
        x_lo = min(min(s.xs) for s in series)
        x_hi = max(max(s.xs) for s in series)
        y_lo = min(min(s.ys) for s in series)
        y_hi = max(max(s.ys) for s in series)
        if x_hi == x_lo:
            x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        axes, sx, sy = _axes(x_lo, x_hi, y_lo, y_hi, xlabel, ylabel)
        body.extend(axes)
        for i, s in enumerate(series):
            pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(s.xs, s.ys))
            color = PALETTE[i % len(PALETTE)]
            body.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
    else:
        n_cat = len(series[0].ys)
        if any(len(s.ys) != n_cat for s in series):
            raise ValueError("all series must cover the same categories")
        if categories is None:
            categories = [f"c{i}" for i in range(n_cat)]
        if len(categories) != n_cat:
            raise ValueError("category labels must match series length")
        y_hi = max(max(s.ys) for s in series)
        y_hi = y_hi if y_hi > 0 else 1.0
        axes, sx, sy = _axes(0.0, float(n_cat), 0.0, y_hi * 1.05, xlabel, ylabel, categories)
        body.extend(axes)
        group_w = 0.8
        bar_w = group_w / len(series)
        for i, s in enumerate(series):
            color = PALETTE[i % len(PALETTE)]
            for c, y in enumerate(s.ys):
                x0 = sx(c + 0.1 + i * bar_w)
                x1 = sx(c + 0.1 + (i + 1) * bar_w)
                y_top = sy(y)
                y_base = sy(0.0)
                body.append(
                    f'<rect x="{_fmt(x0)}" y="{_fmt(y_top)}" '
                    f'width="{_fmt(x1 - x0)}" height="{_fmt(y_base - y_top)}" '
                    f'fill="{color}"/>'
                )

    body.extend(_legend([s.name for s in series]))
    if title:
        body.append(
            f'<text x="{WIDTH / 2}" y="22" font-size="14" text-anchor="middle">{title}</text>'
        )

    doc = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )
    Path(path).write_text(doc)
