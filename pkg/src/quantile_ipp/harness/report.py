"""Grouped summaries, paired Wilcoxon tests and the boxplot SVG."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..errors import ConfigError, DegenerateSampleError, PairingError
from ..stats import PairedSample, five_number, significance_band, wilcoxon_signed_rank
from .sweep import RESULTS_HEADER, ResultsTable, _fmt

# columns that identify a trial's parameters (everything else is an outcome)
PARAM_COLUMNS = ("quantiles", "alpha", "budget", "budget_policy", "comm", "n_robots", "policy", "c", "seed")
REPORT_HEADER = ("section", "group", "group_b", "n", "min", "q1", "median", "q3", "max",
                 "alternative", "W", "p", "band")
_ALTERNATIVES = {":": "two_sided", "<": "less", ">": "greater"}


@dataclass(frozen=True)
class PairSpec:
    a: str
    b: str
    alternative: str = "two_sided"

    @classmethod
    def parse(cls, text: str) -> "PairSpec":
        """``"A:B"`` (two-sided), ``"A<B"`` (A tends lower) or ``"A>B"`` (A tends higher)."""
        for sep, alt in _ALTERNATIVES.items():
            if sep in text:
                a, _, b = text.partition(sep)
                if a and b:
                    return cls(a.strip(), b.strip(), alt)
        raise ConfigError(f"bad pair spec {text!r}; use A:B, A<B or A>B")


def parse_pairs(text: str) -> list[PairSpec]:
    return [PairSpec.parse(p) for p in text.split(",") if p.strip()]


@dataclass
class GroupSummary:
    group: str
    n: int
    five: tuple


@dataclass
class PairResult:
    pair: PairSpec
    n: int
    w: float
    p: float
    band: str


@dataclass
class Report:
    group_by: str
    groups: list
    tests: list
    values: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for g in self.groups:
            w.writerow(["summary", g.group, "", g.n, *(_fmt(float(v)) for v in g.five), "", "", "", ""])
        for t in self.tests:
            w.writerow(["wilcoxon", t.pair.a, t.pair.b, t.n, "", "", "", "", "", t.pair.alternative,
                        _fmt(float(t.w)), _fmt(float(t.p)), t.band])
        return buf.getvalue()

    def to_svg(self, metric: str = "RMSE") -> str:
        return boxplot_svg(self, metric)

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        c, s = out / f"{stem}.csv", out / f"{stem}.svg"
        c.write_text(self.to_csv())
        s.write_text(self.to_svg())
        return c, s


def _group_key(row: dict, column: str) -> str:
    return _fmt(row[column])


def report(table: ResultsTable, group_by: str, pairs: Sequence[PairSpec] = (), *,
           metric: str = "rmse", ignore: Sequence[str] = ()) -> Report:
    """Five-number summaries of ``metric`` per ``group_by`` value and paired tests.

    Rows of two groups are paired on every parameter column except
    ``group_by`` and the columns in ``ignore`` (the seed is always part of
    the key). Groups are listed in first-appearance order.
    """
    if group_by not in PARAM_COLUMNS or group_by == "seed":
        raise ConfigError(f"cannot group by {group_by!r}; choose one of {PARAM_COLUMNS[:-1]}")
    if metric not in RESULTS_HEADER:
        raise ConfigError(f"unknown metric {metric!r}")
    if not table.rows:
        raise ConfigError("empty results table")
    pair_cols = [c for c in PARAM_COLUMNS if c != group_by and c not in ignore]
    values: dict[str, list[float]] = {}
    keyed: dict[str, dict] = {}
    for row in table.rows:
        g = _group_key(row, group_by)
        values.setdefault(g, []).append(float(row[metric]))
        key = tuple(_fmt(row[c]) for c in pair_cols)
        bucket = keyed.setdefault(g, {})
        if key in bucket:
            raise PairingError(f"group {g!r} has duplicate rows for key {dict(zip(pair_cols, key))}")
        bucket[key] = float(row[metric])
    groups = [GroupSummary(g, len(v), five_number(v)) for g, v in values.items()]
    tests = [_paired_test(p, keyed, pair_cols) for p in pairs]
    return Report(group_by, groups, tests, values)


def _paired_test(pair: PairSpec, keyed: dict, pair_cols) -> PairResult:
    for g in (pair.a, pair.b):
        if g not in keyed:
            raise PairingError(f"no group {g!r}; groups are {sorted(keyed)}")
    a, b = keyed[pair.a], keyed[pair.b]
    orphans = sorted(set(a) ^ set(b))
    if orphans:
        shown = [dict(zip(pair_cols, k)) for k in orphans[:5]]
        raise PairingError(f"{len(orphans)} unpaired rows between {pair.a!r} and {pair.b!r}, e.g. {shown}")
    keys = sorted(a)
    sample = PairedSample([a[k] for k in keys], [b[k] for k in keys])
    try:
        w, p = wilcoxon_signed_rank(sample, pair.alternative)
    except DegenerateSampleError:
        w, p = 0.0, 1.0
    return PairResult(pair, len(keys), w, p, significance_band(p))


# ------------------------------------------------------------------------ SVG

_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 64, 16, 24, 48


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    return np.arange(np.floor(lo / step) * step, hi + step * 0.5, step)


def boxplot_svg(rep: Report, metric: str = "RMSE") -> str:
    """Boxplots (whiskers at min and max) with significance bars above."""
    lo = min(g.five[0] for g in rep.groups)
    hi = max(g.five[4] for g in rep.groups)
    ticks = _nice_ticks(min(lo, 0.0), hi)
    y0, y1 = float(ticks[0]), float(ticks[-1])
    n_bars = len(rep.tests)
    plot_top = _TOP + 18 * n_bars
    plot_h = _H - _BOTTOM - plot_top
    plot_w = _W - _LEFT - _RIGHT

    def ys(v: float) -> float:
        return plot_top + plot_h * (1.0 - (v - y0) / (y1 - y0))

    slot = plot_w / len(rep.groups)
    xc = {g.group: _LEFT + slot * (i + 0.5) for i, g in enumerate(rep.groups)}
    half = min(slot * 0.3, 40.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff"/>',
           f'<line x1="{_LEFT}" y1="{plot_top:.2f}" x2="{_LEFT}" y2="{plot_top + plot_h:.2f}" stroke="#000000"/>']
    for t in ticks:
        y = ys(float(t))
        out.append(f'<line x1="{_LEFT - 4}" y1="{y:.2f}" x2="{_LEFT}" y2="{y:.2f}" stroke="#000000"/>')
        out.append(f'<text x="{_LEFT - 6}" y="{y + 4:.2f}" text-anchor="end">{float(t):.3g}</text>')
    out.append(f'<text x="14" y="{plot_top + plot_h / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {plot_top + plot_h / 2:.2f})">{escape(metric)}</text>')
    for g in rep.groups:
        x = xc[g.group]
        mn, q1, med, q3, mx = (ys(float(v)) for v in g.five)
        out.append(f'<g class="box" data-group="{escape(g.group)}">')
        out.append(f'<line x1="{x:.2f}" y1="{mx:.2f}" x2="{x:.2f}" y2="{q3:.2f}" stroke="#000000"/>')
        out.append(f'<line x1="{x:.2f}" y1="{q1:.2f}" x2="{x:.2f}" y2="{mn:.2f}" stroke="#000000"/>')
        for yv in (mn, mx):
            out.append(f'<line x1="{x - half / 2:.2f}" y1="{yv:.2f}" x2="{x + half / 2:.2f}" y2="{yv:.2f}" '
                       f'stroke="#000000"/>')
        out.append(f'<rect x="{x - half:.2f}" y="{q3:.2f}" width="{2 * half:.2f}" height="{q1 - q3:.2f}" '
                   f'fill="#9ecae1" stroke="#000000"/>')
        out.append(f'<line x1="{x - half:.2f}" y1="{med:.2f}" x2="{x + half:.2f}" y2="{med:.2f}" '
                   f'stroke="#d62728" stroke-width="2"/>')
        out.append("</g>")
        out.append(f'<text x="{x:.2f}" y="{_H - _BOTTOM + 18}" text-anchor="middle">{escape(g.group)}</text>')
    out.append(f'<text x="{_LEFT + plot_w / 2:.2f}" y="{_H - 10}" text-anchor="middle">'
               f'{escape(rep.group_by)}</text>')
    for i, t in enumerate(rep.tests):
        y = _TOP + 18 * i + 8
        xa, xb = xc[t.pair.a], xc[t.pair.b]
        out.append(f'<g class="sig" data-p="{_fmt(float(t.p))}">')
        out.append(f'<polyline points="{xa:.2f},{y + 6:.2f} {xa:.2f},{y:.2f} {xb:.2f},{y:.2f} {xb:.2f},{y + 6:.2f}" '
                   f'fill="none" stroke="#000000"/>')
        out.append(f'<text x="{(xa + xb) / 2:.2f}" y="{y - 2:.2f}" text-anchor="middle">{escape(t.band)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
