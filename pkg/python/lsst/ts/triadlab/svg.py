# This file is part of ts_triadlab.
#
# Developed for the Vera Rubin Observatory Telescope and Site Systems.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

__all__ = [
    "SCATTER_KEYS",
    "line_chart",
    "bar_chart",
    "grouped_bar_chart",
    "scatter_chart",
    "plot_summary",
]

import html
import math
import pathlib
import typing

import numpy as np
from numpy.typing import ArrayLike

from .diagnostics import label_sort_key
from .utils import canonical_json

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 40
MARGIN_BOTTOM = 50
COLORS = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
)


class _Scale:
    """Map data values to pixels along one axis.

    Parameters
    ----------
    values : `numpy.ndarray`
        Finite data values the axis must hold.
    low, high : `float`
        Pixel positions of the data minimum and maximum.
    log : `bool`
        Logarithmic scale; non-positive values are dropped.
    """

    def __init__(self, values: ArrayLike, low: float, high: float, log: bool) -> None:
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        if log:
            values = values[values > 0]
        self.log = log
        if values.size == 0:
            values = np.array([1.0]) if log else np.array([0.0])
        vmin, vmax = float(values.min()), float(values.max())
        if log:
            vmin, vmax = math.log10(vmin), math.log10(vmax)
        if vmax - vmin < 1e-12:
            vmin, vmax = vmin - 0.5, vmax + 0.5
        self.vmin, self.vmax = vmin, vmax
        self.low, self.high = low, high

    def valid(self, value: float) -> bool:
        return math.isfinite(value) and (value > 0 or not self.log)

    def __call__(self, value: float) -> float:
        if self.log:
            value = math.log10(value)
        return self.low + (value - self.vmin) / (self.vmax - self.vmin) * (
            self.high - self.low
        )

    def ticks(self, count: int = 5) -> list[tuple[float, str]]:
        """Pixel positions and labels of evenly spaced ticks."""
        ret = []
        for value in np.linspace(self.vmin, self.vmax, count):
            label = f"1e{value:.1f}" if self.log else f"{value:.4g}"
            pixel = self.low + (value - self.vmin) / (self.vmax - self.vmin) * (
                self.high - self.low
            )
            ret.append((pixel, label))
        return ret


def _text(x: float, y: float, text: str, **attributes: str) -> str:
    extra = "".join(
        f' {key.replace("_", "-")}="{value}"' for key, value in attributes.items()
    )
    return f'<text x="{x:.2f}" y="{y:.2f}"{extra}>{html.escape(text)}</text>'


def _frame(
    title: str,
    x_label: str,
    y_label: str,
    x_scale: _Scale | None,
    y_scale: _Scale,
) -> list[str]:
    left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        _text(WIDTH / 2, 20, title, text_anchor="middle", font_size="14"),
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        _text((left + right) / 2, HEIGHT - 10, x_label, text_anchor="middle"),
        _text(
            15,
            (top + bottom) / 2,
            y_label,
            text_anchor="middle",
            transform=f"rotate(-90 15 {(top + bottom) / 2:.2f})",
        ),
    ]
    for pixel, label in y_scale.ticks():
        parts.append(
            f'<line x1="{left - 4}" y1="{pixel:.2f}" x2="{left}" y2="{pixel:.2f}" '
            'stroke="black"/>'
        )
        parts.append(_text(left - 6, pixel + 4, label, text_anchor="end"))
    if x_scale is not None:
        for pixel, label in x_scale.ticks():
            parts.append(
                f'<line x1="{pixel:.2f}" y1="{bottom}" x2="{pixel:.2f}" '
                f'y2="{bottom + 4}" stroke="black"/>'
            )
            parts.append(_text(pixel, bottom + 16, label, text_anchor="middle"))
    return parts


def _legend(names: typing.Sequence[str]) -> list[str]:
    parts: list[str] = []
    for i, name in enumerate(names):
        y = MARGIN_TOP + 12 + 14 * i
        x = WIDTH - MARGIN_RIGHT - 140
        color = COLORS[i % len(COLORS)]
        parts.append(
            f'<line x1="{x}" y1="{y - 4}" x2="{x + 16}" y2="{y - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(_text(x + 20, y, name))
    return parts


def line_chart(
    series: dict[str, tuple[ArrayLike, ArrayLike]],
    title: str,
    x_label: str,
    y_label: str,
    log_y: bool = False,
) -> str:
    """SVG text of a line chart.

    Parameters
    ----------
    series : `dict` [`str`, `tuple`]
        Name to (x, y) values. Non-finite points, and non-positive ones
        with log_y, break the line.
    title, x_label, y_label : `str`
        Chart texts.
    log_y : `bool`, optional
        Logarithmic y axis.
    """
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x_scale = _Scale(xs, MARGIN_LEFT, WIDTH - MARGIN_RIGHT, log=False)
    y_scale = _Scale(ys, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, log=log_y)
    parts = _frame(title, x_label, y_label, x_scale, y_scale)
    for i, (x, y) in enumerate(series.values()):
        color = COLORS[i % len(COLORS)]
        segment: list[str] = []
        runs = []
        for xi, yi in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
            if x_scale.valid(xi) and y_scale.valid(yi):
                segment.append(f"{x_scale(xi):.2f},{y_scale(yi):.2f}")
            elif segment:
                runs.append(segment)
                segment = []
        if segment:
            runs.append(segment)
        for points in runs:
            parts.append(
                f'<polyline points="{" ".join(points)}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"/>'
            )
    parts.extend(_legend(list(series)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(
    labels: typing.Sequence[str],
    values: ArrayLike,
    title: str,
    y_label: str,
    intervals: typing.Sequence[tuple[float, float]] | None = None,
) -> str:
    """SVG text of a bar chart with optional error bars.

    Parameters
    ----------
    labels : `list` [`str`]
        Bar labels.
    values : `numpy.ndarray`
        Bar heights.
    title, y_label : `str`
        Chart texts.
    intervals : `list` [`tuple`], optional
        (low, high) error bar of every bar.
    """
    values = np.asarray(values, dtype=float)
    extent = [0.0, *values.tolist()]
    if intervals is not None:
        extent += [bound for interval in intervals for bound in interval]
    y_scale = _Scale(extent, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, log=False)
    parts = _frame(title, "", y_label, None, y_scale)
    slot = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / max(len(labels), 1)
    for i, (label, value) in enumerate(zip(labels, values.tolist())):
        x = MARGIN_LEFT + i * slot + 0.15 * slot
        top = y_scale(value)
        base = y_scale(0.0)
        parts.append(
            f'<rect x="{x:.2f}" y="{min(top, base):.2f}" width="{0.7 * slot:.2f}" '
            f'height="{abs(base - top):.2f}" fill="{COLORS[0]}"/>'
        )
        center = x + 0.35 * slot
        if intervals is not None:
            low, high = intervals[i]
            parts.append(
                f'<line x1="{center:.2f}" y1="{y_scale(low):.2f}" x2="{center:.2f}" '
                f'y2="{y_scale(high):.2f}" stroke="black"/>'
            )
        parts.append(
            _text(
                center,
                HEIGHT - MARGIN_BOTTOM + 14,
                label,
                text_anchor="middle",
                font_size="9",
            )
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def grouped_bar_chart(
    categories: typing.Sequence[str],
    series: dict[str, ArrayLike],
    title: str,
    x_label: str,
    y_label: str,
    intervals: dict[str, typing.Sequence[tuple[float, float]]] | None = None,
) -> str:
    """SVG text of bars grouped by category, one colour per series.

    Parameters
    ----------
    categories : `list` [`str`]
        Group labels along x.
    series : `dict` [`str`, `numpy.ndarray`]
        Name to one bar height per category. NaN heights leave a gap.
    title, x_label, y_label : `str`
        Chart texts.
    intervals : `dict` [`str`, `list` [`tuple`]], optional
        Name to (low, high) error bar per category.
    """
    heights = {name: np.asarray(values, dtype=float) for name, values in series.items()}
    extent = [0.0]
    for values in heights.values():
        extent += values[np.isfinite(values)].tolist()
    for bounds in (intervals or {}).values():
        extent += [bound for interval in bounds for bound in interval]
    y_scale = _Scale(extent, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, log=False)
    parts = _frame(title, x_label, y_label, None, y_scale)
    slot = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / max(len(categories), 1)
    width = 0.8 * slot / max(len(heights), 1)
    base = y_scale(0.0)
    for i, category in enumerate(categories):
        for j, (name, values) in enumerate(heights.items()):
            value = float(values[i])
            if not math.isfinite(value):
                continue
            x = MARGIN_LEFT + i * slot + 0.1 * slot + j * width
            top = y_scale(value)
            parts.append(
                f'<rect x="{x:.2f}" y="{min(top, base):.2f}" width="{width:.2f}" '
                f'height="{abs(base - top):.2f}" fill="{COLORS[j % len(COLORS)]}"/>'
            )
            if intervals is not None and name in intervals:
                low, high = intervals[name][i]
                center = x + width / 2
                parts.append(
                    f'<line x1="{center:.2f}" y1="{y_scale(low):.2f}" '
                    f'x2="{center:.2f}" y2="{y_scale(high):.2f}" stroke="black"/>'
                )
        parts.append(
            _text(
                MARGIN_LEFT + (i + 0.5) * slot,
                HEIGHT - MARGIN_BOTTOM + 14,
                category,
                text_anchor="middle",
                font_size="9",
            )
        )
    parts.extend(_legend(list(heights)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_chart(
    x: ArrayLike,
    y: ArrayLike,
    title: str,
    x_label: str,
    y_label: str,
    log_x: bool = False,
    groups: typing.Sequence[str] | None = None,
) -> str:
    """SVG text of a scatter chart; invalid points are skipped.

    Points are coloured by groups, one name per point, with a legend in
    `label_sort_key` order.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_scale = _Scale(x, MARGIN_LEFT, WIDTH - MARGIN_RIGHT, log=log_x)
    y_scale = _Scale(y, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, log=False)
    parts = _frame(title, x_label, y_label, x_scale, y_scale)
    names = sorted(set(groups), key=label_sort_key) if groups is not None else []
    for i, (xi, yi) in enumerate(zip(x.tolist(), y.tolist())):
        color = (
            COLORS[names.index(groups[i]) % len(COLORS)]
            if groups is not None
            else COLORS[0]
        )
        if x_scale.valid(xi) and y_scale.valid(yi):
            parts.append(
                f'<circle cx="{x_scale(xi):.2f}" cy="{y_scale(yi):.2f}" r="3" '
                f'fill="{color}" fill-opacity="0.7"/>'
            )
    parts.extend(_legend(names))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# labels the return against max |Q| scatter is coloured by, one chart each
SCATTER_KEYS = (
    "bootstrap.kind",
    "bootstrap.n",
    "approximator.capacity",
    "replay.alpha",
    "prioritization",
)


def _numbers(values: typing.Iterable[typing.Any]) -> np.ndarray:
    """Floats of summary values; non-finite ones are stored as strings."""
    return np.array(
        [math.nan if value is None else float(value) for value in values]
    )


def _ci(entry: dict[str, typing.Any]) -> tuple[float, float]:
    low, high = _numbers(entry["soft_ci"])
    return float(low), float(high)


def _slug(key: str) -> str:
    return key.replace(".", "_")


def _label(value: typing.Any) -> str:
    return value if isinstance(value, str) else canonical_json(value)


def plot_summary(
    summary: dict[str, typing.Any], directory: str | pathlib.Path
) -> list[pathlib.Path]:
    """Write the charts of a sweep summary.

    Parameters
    ----------
    summary : `dict`
        Output of `summarize`, possibly read back from JSON.
    directory : `str` or `pathlib.Path`
        Output directory, created if needed.

    Returns
    -------
    paths : `list` [`pathlib.Path`]
        Always ``fraction_bars.svg``, ``max_q_bands.svg`` and
        ``return_vs_max_q.svg``. Then ``fraction_by_<label>.svg``, bars
        grouped by label value with one colour per bootstrap kind, for
        every crossed label; ``max_q_by_capacity.svg`` if runs are
        labelled with their capacity; and
        ``return_vs_max_q_by_<label>.svg`` for every label of
        `SCATTER_KEYS` the runs carry. Dots in label names become
        underscores.

    Raises
    ------
    ValueError
        If the summary holds no run.
    """
    if not summary.get("n_runs"):
        raise ValueError("Summary holds no run to plot")
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    configs = summary["configs"]

    def config_label(config: dict[str, typing.Any]) -> str:
        labels = config["labels"]
        return (
            " ".join(f"{key.split('.')[-1]}={labels[key]}" for key in sorted(labels))
            or config["config_hash"][:8]
        )

    charts: list[tuple[str, str]] = []
    charts.append(
        (
            "fraction_bars.svg",
            bar_chart(
                [config_label(config) for config in configs],
                _numbers(config["soft_fraction"] for config in configs),
                "Soft divergence fraction per configuration",
                "fraction of runs",
                intervals=[_ci(config) for config in configs],
            ),
        )
    )
    bands = summary["bands"]
    intervals = np.arange(1, len(bands["50"]) + 1)
    charts.append(
        (
            "max_q_bands.svg",
            line_chart(
                {
                    f"p{p}": (intervals, _numbers(bands[p]))
                    for p in sorted(bands, key=int)
                },
                "Max |Q| percentiles over runs",
                "interval",
                "max |Q|",
                log_y=True,
            ),
        )
    )
    points = summary["scatter"]
    median_max_q = _numbers(point["median_max_abs_q"] for point in points)
    mean_return = _numbers(point["mean_return"] for point in points)
    charts.append(
        (
            "return_vs_max_q.svg",
            scatter_chart(
                median_max_q,
                mean_return,
                "Mean return against median max |Q|",
                "median max |Q|",
                "mean return",
                log_x=True,
            ),
        )
    )

    for key, by_kind in sorted(summary.get("crossed", {}).items()):
        values = sorted(
            {entry["value"] for entries in by_kind.values() for entry in entries},
            key=label_sort_key,
        )
        fractions: dict[str, list[float]] = {}
        cis: dict[str, list[tuple[float, float]]] = {}
        for kind, entries in by_kind.items():
            by_value = {entry["value"]: entry for entry in entries}
            fractions[kind] = [
                (
                    float(by_value[value]["soft_fraction"])
                    if value in by_value
                    else math.nan
                )
                for value in values
            ]
            cis[kind] = [
                _ci(by_value[value]) if value in by_value else (0.0, 0.0)
                for value in values
            ]
        charts.append(
            (
                f"fraction_by_{_slug(key)}.svg",
                grouped_bar_chart(
                    values,
                    fractions,
                    f"Soft divergence fraction by bootstrap kind and {key}",
                    key,
                    "fraction of runs",
                    intervals=cis,
                ),
            )
        )

    capacity_bands = summary.get("capacity_bands", [])
    if capacity_bands:
        series: dict[str, tuple[ArrayLike, ArrayLike]] = {}
        for entry in capacity_bands:
            for p in ("50", "90"):
                band = _numbers(entry["bands"][p])
                x = np.arange(1, len(band) + 1)
                series[f"{entry['capacity']} p{p}"] = (x, band)
        charts.append(
            (
                "max_q_by_capacity.svg",
                line_chart(
                    series,
                    "Max |Q| median and 90th percentile by capacity",
                    "interval",
                    "max |Q|",
                    log_y=True,
                ),
            )
        )

    for key in SCATTER_KEYS:
        if not any(key in point.get("labels", {}) for point in points):
            continue
        charts.append(
            (
                f"return_vs_max_q_by_{_slug(key)}.svg",
                scatter_chart(
                    median_max_q,
                    mean_return,
                    f"Mean return against median max |Q| by {key}",
                    "median max |Q|",
                    "mean return",
                    log_x=True,
                    groups=[
                        _label(point.get("labels", {}).get(key, "unlabelled"))
                        for point in points
                    ],
                ),
            )
        )

    paths = []
    for name, text in charts:
        path = directory / name
        path.write_text(text)
        paths.append(path)
    return paths
