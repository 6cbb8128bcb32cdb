"""Figure rendering for experiment outputs.

Reads the delimited files written by the CLI and drops PNG figures next
to them: cumulative regret, per-class backlog traces, the latency CDF,
and the slicing-arm trace.  Everything is parsed from the CSVs so the
figures can also be regenerated later with --report-only.
"""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.0, 3.8)
DPI = 140


def _read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def render_regret(outdir):
    rows = _read_csv(Path(outdir) / "regret.csv")
    if not rows:
        return None
    series = defaultdict(lambda: ([], []))
    for r in rows:
        key = (r["sweep_value"], r["replica"])
        series[key][0].append(int(r["superframe"]))
        series[key][1].append(float(r["regret"]))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for (sv, rep), (x, y) in sorted(series.items()):
        label = f"seed {rep}" + (f" ({sv})" if sv else "")
        ax.plot(x, y, lw=1.0, alpha=0.8, label=label)
    ax.set_xlabel("super-frame")
    ax.set_ylabel("cumulative regret")
    if len(series) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    out = Path(outdir) / "regret.png"
    fig.savefig(out, dpi=DPI)
    plt.close(fig)
    return out


def render_backlog(outdir):
    rows = _read_csv(Path(outdir) / "frames.csv")
    if not rows:
        return None
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["class"]][int(r["frame"])].append(float(r["q"]))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for cls, per_frame in sorted(acc.items()):
        frames = sorted(per_frame)
        ax.plot(frames, [np.mean(per_frame[k]) for k in frames], lw=0.9,
                label=cls)
    ax.set_xlabel("frame")
    ax.set_ylabel("mean backlog (packets)")
    ax.set_yscale("symlog")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(outdir) / "backlog.png"
    fig.savefig(out, dpi=DPI)
    plt.close(fig)
    return out


def render_latency_cdf(outdir, frame_ms=None):
    """Empirical CDF of instantaneous per-user latency (backlog over rate).

    Latency here is the Little's-law view q/lambda per frame; the arrival
    rate per user is estimated from its served+backlog history when the
    scenario is not available.
    """
    rows = _read_csv(Path(outdir) / "frames.csv")
    if not rows:
        return None
    per_user = defaultdict(list)
    arrivals = defaultdict(float)
    count = defaultdict(int)
    for r in rows:
        key = (r["sweep_value"], r["replica"], r["user"], r["class"])
        per_user[key].append(float(r["q"]))
        arrivals[key] += float(r["served_pk"])
        count[key] += 1
    fig, ax = plt.subplots(figsize=FIGSIZE)
    by_class = defaultdict(list)
    for key, qs in per_user.items():
        lam = arrivals[key] / max(count[key], 1)
        if lam <= 0:
            continue
        by_class[key[3]].extend(q / lam for q in qs)
    for cls, lat in sorted(by_class.items()):
        lat = np.sort(lat)
        ax.plot(lat, np.linspace(0, 1, lat.size), lw=1.2, label=cls)
    ax.set_xlabel("latency (frames)")
    ax.set_ylabel("CDF")
    ax.set_xscale("symlog")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(outdir) / "latency_cdf.png"
    fig.savefig(out, dpi=DPI)
    plt.close(fig)
    return out


def render_arms(outdir):
    rows = _read_csv(Path(outdir) / "regret.csv")
    if not rows:
        return None
    series = defaultdict(lambda: ([], []))
    for r in rows:
        key = (r["sweep_value"], r["replica"])
        series[key][0].append(int(r["superframe"]))
        series[key][1].append(int(r["chosen_arm"]))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for (sv, rep), (x, y) in sorted(series.items()):
        ax.plot(x, y, lw=0, marker=".", ms=2, alpha=0.6)
    ax.set_xlabel("super-frame")
    ax.set_ylabel("legacy sub-channels granted")
    fig.tight_layout()
    out = Path(outdir) / "arms.png"
    fig.savefig(out, dpi=DPI)
    plt.close(fig)
    return out


def render_all(outdir):
    made = []
    for fn in (render_regret, render_backlog, render_latency_cdf, render_arms):
        try:
            out = fn(outdir)
        except FileNotFoundError:
            out = None
        if out is not None:
            made.append(out)
    return made
