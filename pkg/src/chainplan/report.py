"""CSV emission and matplotlib figure rendering for the CLI.

CSV schemas are documented in docs/formats.md; every file carries a header
row naming its columns.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .chain import FactorChain, chunk_csv_rows, plan_csv_rows
from .sampler import SampleTrace

METRICS_COLUMNS = ["t", "sync_loss", "async_loss", "start_err", "goal_err",
                   "max_transition_err", "sphere_dev", "guided", "nfe_total"]


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_plan_csv(path, plan: np.ndarray):
    d = plan.shape[1]
    write_csv(path, ["frame_index", *[f"dim_{k}" for k in range(d)]],
              [[i, *(repr(float(v)) for v in frame)] for i, *frame in plan_csv_rows(plan)])


def read_plan_csv(path) -> np.ndarray:
    with open(path) as f:
        rows = list(csv.reader(f))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def write_chunks_csv(path, chunks: np.ndarray):
    d = chunks.shape[2]
    write_csv(path, ["factor_index", "frame_index", *[f"dim_{k}" for k in range(d)]],
              [[i, j, *(repr(float(v)) for v in frame)] for i, j, *frame in chunk_csv_rows(chunks)])


def read_chunks_csv(path) -> np.ndarray:
    with open(path) as f:
        rows = list(csv.reader(f))[1:]
    n = int(rows[-1][0]) + 1
    F = int(rows[-1][1]) + 1
    d = len(rows[0]) - 2
    out = np.zeros((n, F, d))
    for row in rows:
        out[int(row[0]), int(row[1])] = [float(v) for v in row[2:]]
    return out


def write_metrics_csv(path, trace: SampleTrace):
    rows = [[r.t, r.sync_loss, r.async_loss, r.start_err, r.goal_err,
             r.max_transition_err, r.sphere_dev, int(r.guided), r.nfe_total]
            for r in trace.records]
    write_csv(path, METRICS_COLUMNS, rows)


def overlay_figure(path, trace: SampleTrace, chain: FactorChain, title: str = ""):
    """Chunks colored per factor, the merged plan, and the anchors."""
    fig, ax = plt.subplots(figsize=(6, 6))
    cmap = plt.get_cmap("tab10")
    for i, chunk in enumerate(trace.chunks):
        ax.plot(chunk[:, 0], chunk[:, 1], "o-", color=cmap(i % 10),
                alpha=0.7, label=f"factor {i}")
    ax.plot(trace.plan[:, 0], trace.plan[:, 1], "k-", lw=1.5, label="merged plan")
    ax.plot(*chain.start, "g*", ms=16, label="start")
    ax.plot(*chain.goal, "rX", ms=12, label="goal")
    ax.set_aspect("equal")
    ax.legend(fontsize=8, loc="best")
    if title:
        ax.set_title(title)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def loss_curve_figure(path, losses):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(losses, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("training step")
    ax.set_ylabel("loss")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def ablation_figure(path, summary_rows):
    """Median residual per (scheme, steps) cell."""
    schemes = sorted({r["scheme"] for r in summary_rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme in schemes:
        pts = sorted((r["steps"], r["median_residual"]) for r in summary_rows
                     if r["scheme"] == scheme)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=scheme)
    ax.set_xlabel("sampling steps")
    ax.set_ylabel("median max boundary residual")
    ax.set_yscale("log")
    ax.legend()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
