"""Figure rendering for the CLI report paths.

Figures are written straight to files next to the delimited output; nothing
here opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_sweep_figure(rows: list[dict], path: str) -> None:
    """Mean total latency per scheme against the swept parameter value."""
    schemes = sorted({r["scheme"] for r in rows})
    values_order: list = []
    for r in rows:
        if r["param_value"] not in values_order:
            values_order.append(r["param_value"])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for scheme in schemes:
        means = []
        for v in values_order:
            pts = [
                float(r["L_t"]) for r in rows
                if r["scheme"] == scheme and r["param_value"] == v
                and r["L_t"] not in ("", "inf")
            ]
            means.append(sum(pts) / len(pts) if pts else float("nan"))
        ax.plot(range(len(values_order)), means, marker="o", label=scheme)
    ax.set_xticks(range(len(values_order)))
    ax.set_xticklabels([str(v) for v in values_order])
    ax.set_xlabel("parameter value")
    ax.set_ylabel("mean total latency (s)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_simulate_figure(rows: list[dict], path: str) -> None:
    """Makespan distribution per noise level."""
    levels = sorted({float(r["cv"]) for r in rows})
    data = [
        [float(r["makespan_s"]) for r in rows if float(r["cv"]) == lv]
        for lv in levels
    ]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if len(levels) > 1:
        ax.boxplot(data, labels=[f"{lv:g}" for lv in levels])
        ax.set_xlabel("coefficient of variation")
    else:
        ax.hist(data[0], bins=min(20, max(3, len(data[0]) // 4)))
        ax.set_xlabel("makespan (s)")
    ax.set_ylabel("makespan (s)" if len(levels) > 1 else "runs")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
