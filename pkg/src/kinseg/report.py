"""CSV tables, SVG line plots and a text summary for sweep results.

All floats are written with ``repr`` so tables round-trip exactly, and plot
coordinates use fixed-precision formatting; identical inputs give identical
bytes.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluate import BASELINE, FRAME_FIELDS, RunRecord, SweepResult
from .metrics import cumulative_dice_diff

TABLE_HEADER = ("label", "axis", "value", "seeds", "mean_dice", "sd_dice", "mean_ms")
SEED_HEADER = ("label", "axis", "value", "seed", "frames", "mean_dice", "sd_dice", "mean_ms")
FRAME_HEADER = ("label", "axis", "value", "seed", "frame") + FRAME_FIELDS
RUN_HEADER = ("frame",) + FRAME_FIELDS

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def fmt(x) -> str:
    """Exact text for a number; NaN becomes an empty cell."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(x)


def parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- tables

def table_rows(res: SweepResult):
    rows = []
    for label in _labels(res):
        for value in res.values(label):
            c = res.cell(label, value)
            rows.append((label, res.axis, fmt(value), " ".join(str(s) for s in c["seeds"]),
                         fmt(c["mean_dice"]), fmt(c["sd_dice"]), fmt(c["mean_ms"])))
    return rows


def seed_rows(res: SweepResult):
    return [(r.label, res.axis, fmt(r.value), str(r.seed), str(r.frames), fmt(r.mean_dice()),
             fmt(r.sd_dice()), fmt(r.mean_ms())) for r in res.records]


def frame_rows(res: SweepResult):
    rows = []
    for r in res.records:
        for i in range(r.frames):
            rows.append((r.label, res.axis, fmt(r.value), str(r.seed), str(i))
                        + tuple(fmt(r.columns[f][i]) for f in FRAME_FIELDS))
    return rows


def run_frames_csv(record: RunRecord) -> str:
    """Per-frame CSV of a single run."""
    rows = [(str(i),) + tuple(fmt(record.columns[f][i]) for f in FRAME_FIELDS)
            for i in range(record.frames)]
    return _csv_text(RUN_HEADER, rows)


def _labels(res: SweepResult) -> list[str]:
    present = {r.label for r in res.records}
    return [lab for lab in res.labels if lab in present] + sorted(present - set(res.labels))


def _read_csv(path: Path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def _cell(text: str) -> float:
    return float("nan") if text == "" else float(text)


def load_frames(path, name: str | None = None, seed: int = 0, value=0) -> SweepResult:
    """Rebuild a sweep from its per-frame CSV, or a single run from ``frames.csv``.

    A single-run file carries no label columns; ``seed`` and ``value`` (the
    iteration count) are attached to it as given.
    """
    path = Path(path)
    rows = _read_csv(path)
    if name is None:
        name = path.parent.name
    if rows and "label" not in rows[0]:
        columns = {f: np.array([_cell(r[f]) for r in rows]) for f in FRAME_FIELDS}
        return SweepResult(name, "k", (name,), [RunRecord(name, value, seed, columns)])
    groups: dict[tuple, list[dict]] = {}
    axis = "k"
    for r in rows:
        axis = r["axis"]
        groups.setdefault((r["label"], parse_value(r["value"]), int(r["seed"])), []).append(r)
    records = []
    labels: list[str] = []
    for (label, value, seed), rs in groups.items():
        rs.sort(key=lambda r: int(r["frame"]))
        columns = {f: np.array([_cell(r[f]) for r in rs]) for f in FRAME_FIELDS}
        records.append(RunRecord(label, value, seed, columns))
        if label not in labels:
            labels.append(label)
    return SweepResult(name, axis, tuple(labels), records).sort()


# ---------------------------------------------------------------- plots

def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = np.ceil(lo / step) * step
    return [float(first + i * step) for i in range(int(np.floor((hi - first) / step + 1e-9)) + 1)]


def _span(values) -> tuple[float, float]:
    lo, hi = float(min(values)), float(max(values))
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.1, 1.0)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _tick_label(v: float) -> str:
    return f"{v:.6g}"


def line_plot(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], title: str,
              xlabel: str, ylabel: str, width: int = 560, height: int = 380,
              markers: bool = True) -> str:
    """SVG 1.1 line chart; ``series`` holds ``(name, xs, ys)``."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    x0, x1 = _span(xs_all)
    y0, y1 = _span(ys_all)

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = ['<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
           '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" '
           '"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
           f'font-size="14">{_esc(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{_tick_label(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 3:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{_tick_label(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        if len(xs) > 1:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if markers or len(xs) == 1:
            for x, y in zip(xs, ys):
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def time_dice_plot(res: SweepResult) -> str:
    series = []
    for label in _labels(res):
        cells = [res.cell(label, v) for v in res.values(label)]
        series.append((label, [c["mean_ms"] for c in cells], [100.0 * c["mean_dice"] for c in cells]))
    return line_plot(series, f"{res.name}: Dice vs time per frame", "ms per frame", "Dice (%)")


def cumulative_curves(res: SweepResult, reference: str = BASELINE):
    """Seed-averaged cumulative Dice difference of each label against ``reference``
    at every axis value both share."""
    curves = []
    for label in _labels(res):
        if label == reference:
            continue
        for value in res.values(label):
            diffs = []
            for run in res.select(label, value):
                try:
                    ref = res.get(reference, value, run.seed)
                except KeyError:
                    continue
                diffs.append(cumulative_dice_diff(run.columns["dice"], ref.columns["dice"]))
            if diffs and len({len(d) for d in diffs}) == 1:
                curves.append((f"{label} {res.axis}={fmt(value)}", np.mean(diffs, axis=0)))
    return curves


def cumulative_plot(res: SweepResult, curves) -> str:
    series = [(name, list(range(1, len(c) + 1)), [100.0 * v for v in c]) for name, c in curves]
    return line_plot(series, f"{res.name}: cumulative Dice difference vs {BASELINE}",
                     "frames processed", "Dice difference (points)", markers=False)


# ---------------------------------------------------------------- report

def summary_text(results: Sequence[SweepResult]) -> str:
    lines = []
    if not results:
        lines.append("no results")
    for res in results:
        lines.append(f"[{res.name}] axis={res.axis} seeds={' '.join(map(str, res.seeds()))}")
        if not res.records:
            lines.append("  (no runs)")
        for label in _labels(res):
            for value in res.values(label):
                c = res.cell(label, value)
                lines.append(f"  {label:<10} {res.axis}={fmt(value):<8} "
                             f"dice={100 * c['mean_dice']:.2f} +- {100 * c['sd_dice']:.2f}  "
                             f"ms={c['mean_ms']:.1f}")
        curves = cumulative_curves(res)
        for name, c in curves:
            m = min(10, len(c))
            lines.append(f"  cumulative diff {name}: m={m} {100 * c[m - 1]:.2f}, "
                         f"m={len(c)} {100 * c[-1]:.2f}")
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


def emit_report(results: Sequence[SweepResult], out_dir) -> list[Path]:
    """Write tables, per-seed and per-frame CSVs, plots and ``summary.txt``.

    Returns the written paths in creation order.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    written = []

    def put(name, text):
        path = out / name
        _write(path, text)
        written.append(path)

    for res in sorted(results, key=lambda r: r.name):
        res.sort()
        put(f"{res.name}.csv", _csv_text(TABLE_HEADER, table_rows(res)))
        put(f"{res.name}_seeds.csv", _csv_text(SEED_HEADER, seed_rows(res)))
        put(f"{res.name}_frames.csv", _csv_text(FRAME_HEADER, frame_rows(res)))
        if not res.records:
            continue
        put(f"{res.name}_time_dice.svg", time_dice_plot(res))
        curves = cumulative_curves(res)
        if curves:
            put(f"{res.name}_cumulative.svg", cumulative_plot(res, curves))
    put("summary.txt", summary_text(sorted(results, key=lambda r: r.name)))
    return written
