"""AUC-gap tables and self-contained SVG line charts.

Charts show the empirical astuteness curve as a solid line and the predicted
lower bound as a dashed line on ``[lambda_min, lambda_max] x [0, 1]``. When a
combination has several seeds the mean curve is drawn with per-point error
bars (one standard deviation).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import atomic_write
from .robustness import RobustnessCurve, auc

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 16, 28, 44


@dataclass
class Entry:
    """One (dataset, model, explainer) combination; ``emp``/``pred`` hold one curve per seed."""

    dataset: str
    model: str
    explainer: str
    emp: list
    pred: list

    @property
    def key(self) -> str:
        return f"{self.dataset}__{self.model}__{self.explainer}"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _xy(lam, val, lo, hi):
    x = LEFT + (np.asarray(lam) - lo) / (hi - lo) * (W - LEFT - RIGHT)
    y = TOP + (1 - np.asarray(val)) * (H - TOP - BOTTOM)
    return x, y


def _polyline(grid, values, lo, hi, color, dashed=False):
    keep = (grid >= lo) & (grid <= hi)
    x, y = _xy(grid[keep], values[keep], lo, hi)
    pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(x, y))
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{pts}"/>'


def svg_chart(emp: list, pred: list, lambda_min: float, lambda_max: float, title: str = "") -> str:
    """Deterministic SVG text for one combination."""
    lo, hi = float(lambda_min), float(lambda_max)
    e = np.array([c.values for c in emp])
    p = np.array([c.values for c in pred])
    eg, pg = emp[0].grid, pred[0].grid
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W // 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>',
    ]
    x0, y0 = _xy(lo, 0.0, lo, hi)
    x1, y1 = _xy(hi, 1.0, lo, hi)
    out.append(f'<rect x="{_f(x0)}" y="{_f(y1)}" width="{_f(x1 - x0)}" height="{_f(y0 - y1)}" '
               'fill="none" stroke="black" stroke-width="1"/>')
    for t in np.linspace(0, 1, 6):
        _, ty = _xy(lo, t, lo, hi)
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(ty + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:.1f}</text>')
    for t in np.linspace(lo, hi, 6):
        tx, _ = _xy(t, 0.0, lo, hi)
        out.append(f'<text x="{_f(tx)}" y="{_f(y0 + 14)}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:.2f}</text>')
    out.append(f'<text x="{_f((x0 + x1) / 2)}" y="{H - 8}" text-anchor="middle" font-family="sans-serif" '
               'font-size="11">lambda</text>')
    out.append(f'<text x="14" y="{_f((y0 + y1) / 2)}" text-anchor="middle" font-family="sans-serif" font-size="11" '
               f'transform="rotate(-90 14 {_f((y0 + y1) / 2)})">astuteness</text>')
    out.append(_polyline(pg, p.mean(0), lo, hi, "#d62728", dashed=True))
    out.append(_polyline(eg, e.mean(0), lo, hi, "#1f77b4"))
    if len(emp) > 1:
        sd = e.std(0)
        for g, m, s in zip(eg, e.mean(0), sd):
            if lo <= g <= hi and s > 0:
                bx, b0 = _xy(g, max(m - s, 0.0), lo, hi)
                _, b1 = _xy(g, min(m + s, 1.0), lo, hi)
                out.append(f'<line x1="{_f(bx)}" y1="{_f(b0)}" x2="{_f(bx)}" y2="{_f(b1)}" stroke="#1f77b4"/>')
    lx = x1 - 150
    out.append(f'<line x1="{_f(lx)}" y1="{_f(y0 - 30)}" x2="{_f(lx + 24)}" y2="{_f(y0 - 30)}" stroke="#1f77b4" '
               'stroke-width="2"/>')
    out.append(f'<text x="{_f(lx + 30)}" y="{_f(y0 - 26)}" font-family="sans-serif" font-size="10">empirical</text>')
    out.append(f'<line x1="{_f(lx)}" y1="{_f(y0 - 14)}" x2="{_f(lx + 24)}" y2="{_f(y0 - 14)}" stroke="#d62728" '
               'stroke-width="2" stroke-dasharray="6,4"/>')
    out.append(f'<text x="{_f(lx + 30)}" y="{_f(y0 - 10)}" font-family="sans-serif" font-size="10">'
               'predicted bound</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summarize(entry: Entry, interval: tuple[float, float]) -> dict:
    """AUCs and gap for one combination; mean and std across seeds."""
    if not entry.emp or len(entry.emp) != len(entry.pred):
        raise ValueError(f"{entry.key}: need one predicted bound per empirical curve")
    ae = np.array([auc(c, *interval) for c in entry.emp])
    ap = np.array([auc(c, *interval) for c in entry.pred])
    gaps = ae - ap
    return {
        "dataset": entry.dataset, "model": entry.model, "explainer": entry.explainer,
        "auc_emp": float(ae.mean()), "auc_pred": float(ap.mean()),
        "auc_gap": float(gaps.mean()), "auc_gap_std": float(gaps.std()), "n_seeds": len(gaps),
        "min_pointwise_margin": float(min(np.min(e.values - p.values) for e, p in zip(entry.emp, entry.pred))),
    }


def gap_matrix(rows: list) -> dict:
    """Nested ``{dataset: {model: {explainer: auc_gap}}}``."""
    out: dict = {}
    for r in rows:
        out.setdefault(r["dataset"], {}).setdefault(r["model"], {})[r["explainer"]] = r["auc_gap"]
    return out


def write_report(entries: list, out_dir, interval: tuple[float, float] = (0.1, 1.1)) -> dict:
    """Write ``report.json``, ``report.csv`` and one SVG per combination."""
    if not entries:
        raise ValueError("report needs at least one curve")
    for e in entries:
        for c in e.emp:
            _expect(c, "astuteness")
        for c in e.pred:
            _expect(c, "predicted_bound")
    out_dir = Path(out_dir)
    rows = [summarize(e, interval) for e in sorted(entries, key=lambda e: e.key)]
    for e in entries:
        atomic_write(out_dir / f"{e.key}.svg",
                     svg_chart(e.emp, e.pred, *interval, title=f"{e.dataset} / {e.model} / {e.explainer}"))
    doc = {"interval": list(interval), "rows": rows, "matrix": gap_matrix(rows)}
    atomic_write(out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    atomic_write(out_dir / "report.csv", buf.getvalue())
    return doc


def _expect(c: RobustnessCurve, kind: str) -> None:
    if c.kind != kind:
        raise ValueError(f"expected a {kind} curve, got {c.kind}")
