"""Report figures (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import NetworkReport  # noqa: E402


def utilization_figure(report: NetworkReport, path, reference: float | None = None) -> Path:
    """Per-layer grid utilization bars with the network mean."""
    names = [m.name for m in report.layers]
    util = [100 * m.grid_utilization for m in report.layers]
    fig, ax = plt.subplots(figsize=(max(6, 0.32 * len(names) + 2), 3.6))
    ax.bar(range(len(names)), util, color="#4c72b0")
    ax.axhline(100 * report.mean_utilization, color="k", ls="--", lw=1,
               label=f"mean {100 * report.mean_utilization:.1f}%")
    if reference is not None:
        ax.axhline(100 * reference, color="#c44e52", ls=":", lw=1,
                   label=f"published {100 * reference:.0f}%")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylim(0, 105)
    ax.set_ylabel("thread utilization (%)")
    ax.set_title(f"{report.name}: per-layer utilization")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def latency_figure(report: NetworkReport, path, reference_ms: dict | None = None) -> Path:
    """Per-layer modeled latency, optionally next to published values."""
    names = [m.name for m in report.layers]
    ms = [1e3 * m.latency_s for m in report.layers]
    fig, ax = plt.subplots(figsize=(max(6, 0.32 * len(names) + 2), 3.6))
    xs = list(range(len(names)))
    if reference_ms:
        ref = [reference_ms.get(n, 0.0) for n in names]
        ax.bar([x - 0.2 for x in xs], ms, width=0.4, label="modeled")
        ax.bar([x + 0.2 for x in xs], ref, width=0.4, label="published")
        ax.legend(fontsize=8)
    else:
        ax.bar(xs, ms)
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("latency (ms)")
    ax.set_title(f"{report.name}: latency at {report.layers[0].clock_hz / 1e6:g} MHz")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
