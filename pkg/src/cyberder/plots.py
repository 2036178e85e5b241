"""Minimal standalone SVG line charts for run and sweep outputs."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=70, right=20, top=30, bottom=45)
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, count)


def _decimate(x: np.ndarray, y: np.ndarray, limit: int = 1500):
    if len(x) <= limit:
        return x, y
    step = int(np.ceil(len(x) / limit))
    return x[::step], y[::step]


def line_chart(series, title: str, xlabel: str, ylabel: str, hlines=(), markers: bool = False) -> str:
    """``series`` is a list of (label, x, y); ``hlines`` a list of (label, y)."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series] + [np.array([h[1] for h in hlines], float)])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    pad = 0.05 * (y1 - y0) if y1 > y0 else max(abs(y0) * 0.05, 1e-3)
    y0, y1 = y0 - pad, y1 + pad
    if x1 == x0:
        x1 = x0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (y1 - np.asarray(y, float)) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{HEIGHT - MARGIN["bottom"] + 15}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{MARGIN["left"] - 5}" y="{py(t):.1f}" text-anchor="end" dominant-baseline="middle">{t:.4g}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>'
    )
    for label, y in hlines:
        out.append(
            f'<line x1="{MARGIN["left"]}" x2="{WIDTH - MARGIN["right"]}" y1="{py(y):.1f}" y2="{py(y):.1f}" '
            f'stroke="#888" stroke-dasharray="5,4"><title>{escape(label)}</title></line>'
        )
    for k, (label, x, y) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        x, y = _decimate(np.asarray(x, float), np.asarray(y, float))
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px(x), py(y)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{pts}"/>')
        if markers:
            out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{color}"/>' for a, b in zip(px(x), py(y)))
        ly = MARGIN["top"] + 14 + 14 * k
        lx = MARGIN["left"] + 10
        out.append(f'<line x1="{lx}" x2="{lx + 18}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_run(sim, inputs, out_dir) -> None:
    rec = sim.rec
    base = sim.feeder.base_kva
    t = np.array(rec.t)
    out = Path(out_dir)
    head = line_chart(
        [("P0 measured", t, np.array(rec.p0) * base), ("P0 setpoint", t, np.array(rec.p0_set) * base)],
        "Head power vs setpoint",
        "time (s)",
        "kW",
    )
    (out / "head_power.svg").write_text(head)
    volt = line_chart(
        [("max |V|", t, rec.v_max), ("min |V|", t, rec.v_min)],
        "Voltage band",
        "time (s)",
        "p.u.",
        hlines=[("v_min", sim.params.v_min), ("v_max", sim.params.v_max)],
    )
    (out / "voltage.svg").write_text(volt)


def plot_sweep(rows, path) -> None:
    groups = {}
    for r in rows:
        groups.setdefault(f"{r['strategy']} {r['direction']}", []).append((r["loss_rate"], r["tracking_rmse_kw"]))
    series = []
    for label, pts in groups.items():
        pts.sort()
        series.append((label, [100 * p[0] for p in pts], [p[1] for p in pts]))
    Path(path).write_text(line_chart(series, "Tracking error vs loss rate", "loss rate (%)", "tracking RMSE (kW)", markers=True))
