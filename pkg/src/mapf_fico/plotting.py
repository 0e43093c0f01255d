"""Figures for the ``report`` subcommand (matplotlib, Agg backend)."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
COLORS = {"fico": "#1f77b4", "pibt": "#d62728"}


def _figure(width: float = 5.0):
    fig, ax = plt.subplots(figsize=(width, width * GOLDEN))
    ax.grid(True, alpha=0.3)
    return fig, ax


def _series(rows, metric):
    """algo -> (agent counts, mean, standard error) over seeds."""
    out = {}
    for algo in sorted({r["algo"] for r in rows}):
        xs, mu, se = [], [], []
        for n in sorted({r["agents"] for r in rows}):
            vals = [r[metric] for r in rows if r["algo"] == algo and r["agents"] == n and r[metric] is not None]
            if not vals:
                continue
            v = np.asarray(vals, dtype=float)
            xs.append(n)
            mu.append(v.mean())
            se.append(v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0)
        if xs:
            out[algo] = (np.array(xs), np.array(mu), np.array(se))
    return out


def _line_plot(rows, metric, ylabel, path) -> str | None:
    series = _series(rows, metric)
    if not series:
        return None
    fig, ax = _figure()
    for algo, (x, m, s) in series.items():
        ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=algo.upper(), color=COLORS.get(algo))
    ax.set_xlabel("agents")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report(rows: list[dict], reduction: dict[int, float], out_dir: str) -> list[str]:
    written = []
    for metric, label in (("delta_soc", "delta SOC"), ("throughput", "goals / step"),
                          ("items_delivered", "items delivered"), ("ert_s", "first-step time [s]")):
        p = _line_plot(rows, metric, label, os.path.join(out_dir, f"{metric}.png"))
        if p:
            written.append(p)
    if reduction:
        fig, ax = _figure()
        xs = sorted(reduction)
        ax.bar([str(x) for x in xs], [100 * reduction[x] for x in xs], color=COLORS["fico"])
        ax.set_xlabel("agents")
        ax.set_ylabel("conflict-free agents [%]")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        path = os.path.join(out_dir, "reduction.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
