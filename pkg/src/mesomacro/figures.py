"""Render run figures (PNG) from the delimited outputs of a simulation.

Works from the CSV files alone so figures can be regenerated after the fact
(``mesomacro report``); the simulate path calls this right after writing the
CSVs when figures are enabled.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import OutputError  # noqa: E402

TOP_REGIONS = 8


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_region_accumulation(region_csv, out_png, top=TOP_REGIONS):
    """Accumulation and speed over time for the busiest regions."""
    rows = _read_csv(region_csv)
    acc = defaultdict(list)
    spd = defaultdict(list)
    for r in rows:
        rid = r["region_id"]
        t = float(r["t_s"]) / 3600.0
        acc[rid].append((t, float(r["accumulation_veh"])))
        spd[rid].append((t, float(r["speed_mps"])))
    if not acc:
        return None
    ranked = sorted(acc, key=lambda rid: -max(v for _, v in acc[rid]))[:top]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for rid in ranked:
        ts, vs = zip(*acc[rid])
        ax1.plot(ts, vs, lw=1.0, label=f"region {rid}")
        ts, vs = zip(*spd[rid])
        ax2.plot(ts, vs, lw=1.0)
    ax1.set_ylabel("accumulation (veh)")
    ax1.legend(fontsize=7, ncol=2, frameon=False)
    ax2.set_ylabel("speed (m/s)")
    ax2.set_xlabel("time (h)")
    ax1.set_title("Regional vehicle accumulation and speed")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_network_occupancy(volume_csv, out_png):
    """Total on-link vehicles over time (link-model regions only)."""
    rows = _read_csv(volume_csv)
    totals = defaultdict(float)
    for r in rows:
        totals[float(r["t_s"]) / 3600.0] += float(r["occupancy_veh"])
    if not totals:
        return None
    ts = sorted(totals)
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(ts, [totals[t] for t in ts], lw=1.2, color="tab:red")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("vehicles on links")
    ax.set_title("Link occupancy")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_trip_completion(completions_csv, out_png):
    """Cumulative departures and completions over time."""
    rows = _read_csv(completions_csv)
    if not rows:
        return None
    departs = sorted((float(r["depart_time_s"]) / 3600.0, float(r["size"])) for r in rows)
    finishes = sorted((float(r["completion_time_s"]) / 3600.0, float(r["size"])) for r in rows)
    fig, ax = plt.subplots(figsize=(8, 3.2))
    for series, label, color in ((departs, "departed (completed trips)", "tab:blue"),
                                 (finishes, "completed", "tab:green")):
        ts, sizes = zip(*series)
        cum = []
        total = 0.0
        for s in sizes:
            total += s
            cum.append(total)
        ax.step(ts, cum, where="post", label=label, color=color, lw=1.2)
    ax.set_xlabel("time (h)")
    ax.set_ylabel("vehicles")
    ax.legend(fontsize=8, frameon=False)
    ax.set_title("Trip completion")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_run_figures(run_dir, out_dir=None):
    """Render every figure whose source CSV exists; returns written paths."""
    out_dir = out_dir or run_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create figure dir {out_dir}: {exc}")
    jobs = (
        ("region_accumulation.csv", "region_accumulation.png", plot_region_accumulation),
        ("link_volumes.csv", "link_occupancy.png", plot_network_occupancy),
        ("completions.csv", "trip_completion.png", plot_trip_completion),
    )
    written = []
    for src, dst, fn in jobs:
        src_path = os.path.join(run_dir, src)
        if not os.path.exists(src_path):
            continue
        out = fn(src_path, os.path.join(out_dir, dst))
        if out:
            written.append(out)
    return written
