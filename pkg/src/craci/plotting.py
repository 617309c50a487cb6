"""Report figures. Rendered off-screen; every function writes one PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_sweep(report, path) -> Path:
    """Communication share and latency against fleet size."""
    fleets = [f for f in report.fleets if f.requests]
    x = [f.fleet for f in fleets]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(x, [100 * f.comm_share for f in fleets], "o-", color="tab:red")
    ax1.set_xlabel("robots")
    ax1.set_ylabel("communication share of busy time (%)")
    ax1.set_title("Coordination cost")
    ax1.grid(alpha=0.3)
    ax2.plot(x, [f.latency_mean for f in fleets], "o-", label="mean")
    ax2.plot(x, [f.latency_p95 for f in fleets], "s--", label="p95")
    ax2.set_xlabel("robots")
    ax2.set_ylabel("end-to-end latency (ticks)")
    ax2.set_title("Request latency")
    ax2.legend()
    ax2.grid(alpha=0.3)
    return _save(fig, path)


def plot_breakdown(report, path) -> Path:
    """Mean processing vs communication ticks per request, stacked per fleet."""
    fleets = [f for f in report.fleets if f.requests]
    labels = [str(f.fleet) for f in fleets]
    proc = np.array([f.proc_ticks for f in fleets])
    comm = np.array([f.comm_ticks for f in fleets])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, proc, label="processing", color="tab:blue")
    ax.bar(labels, comm, bottom=proc, label="communication", color="tab:orange")
    ax.set_xlabel("robots")
    ax.set_ylabel("ticks per request")
    ax.set_title("Latency breakdown")
    ax.legend()
    return _save(fig, path)


def plot_compare(comparison, path) -> Path:
    """Per-fleet mean latency with the predictor at the edge vs in the cloud."""
    fleets = [c for c in comparison.fleets if c.edge_latencies]
    labels = [str(c.fleet) for c in fleets]
    edge = [float(np.mean(list(c.edge_latencies.values()))) for c in fleets]
    cloud = [float(np.mean(list(c.cloud_latencies.values()))) for c in fleets]
    pos = np.arange(len(labels))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(pos - 0.2, edge, 0.4, label="edge")
    ax1.bar(pos + 0.2, cloud, 0.4, label="cloud")
    ax1.set_xticks(pos, labels)
    ax1.set_xlabel("robots")
    ax1.set_ylabel("mean latency (ticks)")
    ax1.legend()
    deltas = [d for c in fleets for d in c.deltas.values()]
    if deltas:
        ax2.hist(deltas, bins=30, color="tab:green")
    ax2.set_xlabel("cloud - edge latency per request (ticks)")
    ax2.set_ylabel("requests")
    return _save(fig, path)


def plot_gaps(report, path) -> Path:
    """Handover service gaps, proactive vs cold."""
    fig, ax = plt.subplots(figsize=(6, 4))
    pro = [h.gap for f in report.fleets for h in f.handovers if h.proactive]
    cold = [h.gap for f in report.fleets for h in f.handovers if not h.proactive]
    if pro or cold:
        ax.hist([pro, cold], bins=20, label=["proactive", "cold"], stacked=True)
        ax.legend()
    ax.set_xlabel("service gap at handover (ticks)")
    ax.set_ylabel("handovers")
    return _save(fig, path)
