"""Self-contained SVG figures: overlap histograms and boxplots.

Boxplot statistics are computed here (type-7 quartiles, whiskers at the most
extreme points within 1.5 IQR of the box) and embedded as JSON in each
figure's ``<metadata>`` element so they can be checked without parsing paths.
"""
from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .runner import METRICS_JSON, _load_shard

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=70)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
          "#7f7f7f", "#bcbd22", "#17becf")


def five_number(values) -> dict:
    """Median, quartiles and 1.5-IQR whiskers of the finite entries."""
    v = np.asarray(values, dtype=float)
    v = np.sort(v[np.isfinite(v)])
    if v.size == 0:
        raise ValueError("no finite values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = float(v[v >= q1 - 1.5 * iqr].min())
    hi = float(v[v <= q3 + 1.5 * iqr].max())
    outliers = v[(v < lo) | (v > hi)]
    return {"n": int(v.size), "whisker_low": lo, "q1": float(q1), "median": float(med),
            "q3": float(q3), "whisker_high": hi, "outliers": [float(x) for x in outliers]}


class _Canvas:
    def __init__(self, title: str, xlabel: str = "", ylabel: str = ""):
        self.parts = []
        self.meta = {}
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def add(self, element: str) -> None:
        self.parts.append(element)

    def text(self, x, y, s, anchor="middle", size=12, rotate=None):
        rot = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate else ""
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
                 f'text-anchor="{anchor}"{rot}>{escape(str(s))}</text>')

    def axes(self, ylim, yticks=5):
        lo, hi = ylim
        self.add(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" '
                 'stroke="black"/>')
        self.add(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" '
                 'stroke="black"/>')
        for v in np.linspace(lo, hi, yticks):
            y = self.ymap(v, ylim)
            self.add(f'<line x1="{self.x0 - 4}" y1="{y:.2f}" x2="{self.x0}" y2="{y:.2f}" '
                     'stroke="black"/>')
            self.text(self.x0 - 6, y + 4, f"{v:.3g}", anchor="end", size=10)
        self.text(WIDTH / 2, 22, self.title, size=14)
        if self.xlabel:
            self.text(WIDTH / 2, HEIGHT - 12, self.xlabel)
        if self.ylabel:
            self.text(16, (self.y0 + self.y1) / 2, self.ylabel, rotate=-90)

    def ymap(self, v, ylim):
        lo, hi = ylim
        if hi <= lo:
            return (self.y0 + self.y1) / 2
        return self.y0 - (v - lo) / (hi - lo) * (self.y0 - self.y1)

    def render(self) -> str:
        meta = escape(json.dumps(self.meta, sort_keys=True))
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<metadata>{meta}</metadata>\n'
                '<rect width="100%" height="100%" fill="white"/>\n'
                + "\n".join(self.parts) + "\n</svg>\n")


def _padded(lo, hi):
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 0.1
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def boxplot_svg(series: dict, title: str, ylabel: str = "") -> str:
    """Side-by-side boxplots of ``{label: values}``; NaNs are ignored."""
    stats = {}
    for k, v in series.items():
        try:
            stats[k] = five_number(v)
        except ValueError:
            continue
    c = _Canvas(title, ylabel=ylabel)
    c.meta = {"type": "boxplot", "series": stats}
    if not stats:
        c.axes((0.0, 1.0))
        c.text(WIDTH / 2, HEIGHT / 2, "no finite values")
        return c.render()
    lo = min(min([s["whisker_low"]] + s["outliers"]) for s in stats.values())
    hi = max(max([s["whisker_high"]] + s["outliers"]) for s in stats.values())
    ylim = _padded(lo, hi)
    c.axes(ylim)
    slot = (c.x1 - c.x0) / len(stats)
    for i, (label, s) in enumerate(stats.items()):
        cx = c.x0 + slot * (i + 0.5)
        half = min(slot * 0.3, 30)
        color = COLORS[i % len(COLORS)]
        y = {k: c.ymap(s[k], ylim) for k in ("whisker_low", "q1", "median", "q3",
                                            "whisker_high")}
        c.add(f'<g class="box" data-label="{escape(label)}">')
        c.add(f'<line x1="{cx:.2f}" y1="{y["whisker_low"]:.2f}" x2="{cx:.2f}" '
              f'y2="{y["q1"]:.2f}" stroke="{color}"/>')
        c.add(f'<line x1="{cx:.2f}" y1="{y["q3"]:.2f}" x2="{cx:.2f}" '
              f'y2="{y["whisker_high"]:.2f}" stroke="{color}"/>')
        if s["q3"] > s["q1"]:
            c.add(f'<rect x="{cx - half:.2f}" y="{y["q3"]:.2f}" width="{2 * half:.2f}" '
                  f'height="{y["q1"] - y["q3"]:.2f}" fill="none" stroke="{color}"/>')
        c.add(f'<line x1="{cx - half:.2f}" y1="{y["median"]:.2f}" x2="{cx + half:.2f}" '
              f'y2="{y["median"]:.2f}" stroke="{color}" stroke-width="2"/>')
        for o in s["outliers"]:
            c.add(f'<circle cx="{cx:.2f}" cy="{c.ymap(o, ylim):.2f}" r="2" fill="{color}"/>')
        c.add("</g>")
        c.text(cx, c.y0 + 16, label, size=9, rotate=None if len(stats) < 6 else 30)
    return c.render()


def histogram_svg(values_by_group: dict, title: str, bins: int = 20,
                  range_: tuple = (0.0, 1.0), xlabel: str = "") -> str:
    """Overlaid count histograms with shared bins; counts go to metadata."""
    edges = np.linspace(range_[0], range_[1], bins + 1)
    counts = {k: np.histogram(np.asarray(v, dtype=float), bins=edges)[0].tolist()
              for k, v in values_by_group.items()}
    c = _Canvas(title, xlabel=xlabel, ylabel="count")
    c.meta = {"type": "histogram", "edges": edges.tolist(), "counts": counts}
    top = max([max(v) for v in counts.values()] + [1])
    ylim = (0.0, float(top))
    c.axes(ylim)
    bw = (c.x1 - c.x0) / bins
    for i, (label, cnt) in enumerate(counts.items()):
        color = COLORS[i % len(COLORS)]
        for b, n in enumerate(cnt):
            if n == 0:
                continue
            y = c.ymap(n, ylim)
            c.add(f'<rect x="{c.x0 + b * bw:.2f}" y="{y:.2f}" width="{bw:.2f}" '
                  f'height="{c.y0 - y:.2f}" fill="{color}" fill-opacity="0.45" '
                  f'stroke="{color}"/>')
        c.text(c.x1 - 4, c.y1 + 14 * (i + 1), f"{label} (n={sum(cnt)})", anchor="end",
               size=11)
    for v in (0, bins // 2, bins):
        c.text(c.x0 + v * bw, c.y0 + 16, f"{edges[v]:.2g}", size=10)
    return c.render()


def scatter_svg(x, y, title: str, xlabel: str = "", ylabel: str = "") -> str:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = _Canvas(title, xlabel=xlabel, ylabel=ylabel)
    c.meta = {"type": "scatter", "n": int(len(x))}
    ylim = _padded(float(np.min(y)), float(np.max(y)))
    xlim = _padded(float(np.min(x)), float(np.max(x)))
    c.axes(ylim)
    for xi, yi in zip(x, y):
        px = c.x0 + (xi - xlim[0]) / (xlim[1] - xlim[0]) * (c.x1 - c.x0)
        c.add(f'<circle cx="{px:.2f}" cy="{c.ymap(yi, ylim):.2f}" r="2" fill="{COLORS[0]}"/>')
    for v in (xlim[0], xlim[1]):
        px = c.x0 + (v - xlim[0]) / (xlim[1] - xlim[0]) * (c.x1 - c.x0)
        c.text(px, c.y0 + 16, f"{v:.3g}", size=10)
    return c.render()


def emit_plots(results_dir) -> list:
    """Write the figure analogues for a finished benchmark; returns the paths."""
    out = Path(results_dir)
    summary = json.loads((out / METRICS_JSON).read_text(encoding="utf-8"))
    plot_dir = out / "plots"
    plot_dir.mkdir(exist_ok=True)
    written = []

    def save(name, svg):
        path = plot_dir / name
        path.write_text(svg, encoding="utf-8")
        written.append(path)

    for scen, methods in summary.items():
        if scen.startswith("_"):
            continue
        first = out / "shards" / scen / "rep_00000.npz"
        if first.exists():
            shard = _load_shard(first)
            z = shard["z"]
            save(f"{scen}_propensity.svg",
                 histogram_svg({"treated": shard["e_true"][z == 1],
                                "control": shard["e_true"][z == 0]},
                               f"True propensity by arm ({scen})", xlabel="e(x)"))
        for metric, label in (("relbias", "Relative bias"), ("rmse", "RMSE"),
                              ("regret", "Expected regret")):
            save(f"{scen}_{metric}.svg",
                 boxplot_svg({m: v[metric] for m, v in methods.items()},
                             f"{label} over propensity subclasses ({scen})", label))
        pct = {m: v["pct_increase"] for m, v in methods.items() if v["pct_increase"]}
        if pct:
            save(f"{scen}_pct_increase.svg",
                 boxplot_svg(pct, f"Percent increase in PEHE over best ({scen})", "%"))
    return written
