"""Seed-averaged reward curves with t-distribution 95% intervals, and SVG output."""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .runner import read_metrics

SUMMARY_COLUMNS = ("variant", "env", "bin", "episode_start", "episode_end", "global_step",
                   "n_seeds", "mean", "ci_low", "ci_high")


@dataclass
class SummaryBin:
    variant: str
    env: str
    bin: int
    episode_start: int
    episode_end: int
    global_step: float
    n_seeds: int
    mean: float
    ci_low: float | None
    ci_high: float | None


def t_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float | None]:
    """Mean and half-width of the t interval; half-width is None for one value."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("no values")
    m = float(x.mean())
    if len(x) < 2:
        return m, None
    sem = float(x.std(ddof=1)) / math.sqrt(len(x))
    return m, float(stats.t.ppf(0.5 + level / 2, len(x) - 1)) * sem


def bin_curve(rewards: Sequence[float], bin_width: int) -> np.ndarray:
    """Mean reward of each complete-or-partial block of ``bin_width`` episodes."""
    r = np.asarray(rewards, dtype=np.float64)
    n_bins = math.ceil(len(r) / bin_width)
    return np.array([r[k * bin_width:(k + 1) * bin_width].mean() for k in range(n_bins)])


def summarize_rows(rows: Iterable[dict], bin_width: int = 100) -> list[SummaryBin]:
    if bin_width < 1:
        raise ValueError("bin width must be positive")
    runs: dict[tuple[str, str], dict[int, list[dict]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        runs[(r["variant"], r["env"])][r["seed"]].append(r)
    if not runs:
        raise ValueError("no metrics rows to summarize")
    out: list[SummaryBin] = []
    for (variant, env), by_seed in sorted(runs.items()):
        if len(by_seed) < 2:
            warnings.warn(f"{variant}/{env}: only one seed, reporting the mean without an interval",
                          stacklevel=2)
        curves, steps = [], []
        for seed in sorted(by_seed):
            eps = sorted(by_seed[seed], key=lambda r: r["episode"])
            curves.append(bin_curve([r["mean_episode_reward"] for r in eps], bin_width))
            steps.append([eps[min(len(eps), (k + 1) * bin_width) - 1]["global_step"]
                          for k in range(len(curves[-1]))])
        # keep the bins every seed reached
        n_bins = min(len(c) for c in curves)
        for k in range(n_bins):
            vals = [c[k] for c in curves]
            m, half = t_interval(vals)
            lo, hi = (None, None) if half is None else (m - half, m + half)
            out.append(SummaryBin(variant, env, k, k * bin_width, (k + 1) * bin_width - 1,
                                  float(np.mean([s[k] for s in steps])), len(vals), m, lo, hi))
    return out


def summarize(paths: Sequence[str | Path], bin_width: int = 100) -> list[SummaryBin]:
    rows = [r for p in paths for r in read_metrics(p)]
    return summarize_rows(rows, bin_width)


def write_summary(bins: Sequence[SummaryBin], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for b in bins:
            w.writerow([b.variant, b.env, b.bin, b.episode_start, b.episode_end, repr(b.global_step),
                        b.n_seeds, repr(b.mean), "" if b.ci_low is None else repr(b.ci_low),
                        "" if b.ci_high is None else repr(b.ci_high)])


def read_summary(path: str | Path) -> list[SummaryBin]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(SummaryBin(r["variant"], r["env"], int(r["bin"]), int(r["episode_start"]),
                                  int(r["episode_end"]), float(r["global_step"]), int(r["n_seeds"]),
                                  float(r["mean"]),
                                  float(r["ci_low"]) if r["ci_low"] else None,
                                  float(r["ci_high"]) if r["ci_high"] else None))
    return out


# ------------------------------------------------------------ SVG chart

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(bins: Sequence[SummaryBin], title: str = "Mean episode reward",
               width: int = 640, height: int = 400) -> str:
    if not bins:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [b.global_step for b in bins]
    ys = [b.mean for b in bins] + [v for b in bins for v in (b.ci_low, b.ci_high) if v is not None]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y: float) -> float:
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        parts.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
        parts.append(f'<text x="{left - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">environment steps</text>')

    groups: dict[tuple[str, str], list[SummaryBin]] = defaultdict(list)
    for b in bins:
        groups[(b.variant, b.env)].append(b)
    for n, (key, series) in enumerate(sorted(groups.items())):
        color = PALETTE[n % len(PALETTE)]
        series = sorted(series, key=lambda b: b.bin)
        band = [b for b in series if b.ci_low is not None]
        if band:
            upper = " ".join(f"{sx(b.global_step):.1f},{sy(b.ci_high):.1f}" for b in band)
            lower = " ".join(f"{sx(b.global_step):.1f},{sy(b.ci_low):.1f}" for b in reversed(band))
            parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{sx(b.global_step):.1f},{sy(b.mean):.1f}" for b in series)
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * n + 8
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 32}" y="{ly + 4}">{key[0]} ({key[1]})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
