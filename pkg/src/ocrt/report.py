"""Figure rendering for benchmark outputs.

Figures are written next to the delimited output; the CSV remains the
primary machine-readable contract.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_benchmark_figures(rows, csv_path: str | Path) -> list[Path]:
    """Summary bar charts (mean gap and mean training time per method)."""
    from .bench import BASELINE_METHOD, summarize_mean

    csv_path = Path(csv_path)
    written: list[Path] = []

    deltas = summarize_mean(rows, "delta")
    deltas.pop(BASELINE_METHOD, None)
    if deltas:
        methods = sorted(deltas, key=deltas.get)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(methods, [100.0 * deltas[m] for m in methods], color="#4878b0")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_ylabel(f"mean MSE gap vs {BASELINE_METHOD} (%)")
        ax.set_title("Relative error gap by method")
        fig.tight_layout()
        out = csv_path.with_name(csv_path.stem + "_delta.png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        written.append(out)

    times = summarize_mean(rows, "train_time_s")
    if times:
        methods = sorted(times, key=times.get)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(methods, [times[m] for m in methods], color="#b04848")
        ax.set_yscale("log")
        ax.set_ylabel("mean training time (s, log scale)")
        ax.set_title("Training time by method")
        fig.tight_layout()
        out = csv_path.with_name(csv_path.stem + "_time.png")
        fig.savefig(out, dpi=150)
        plt.close(fig)
        written.append(out)
    return written


def render_depth_tradeoff_figure(rows, best_depth: int, out_path: str | Path) -> Path:
    """Two panels: infeasible share per depth and test MSE per depth.

    The depth with the lowest test MSE is highlighted in both panels.
    """
    out_path = Path(out_path)
    depths = [r["depth"] for r in rows]
    infeas = [r["infeasible_pct"] for r in rows]
    mses = [r["test_mse"] for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    colors = ["#d62728" if d == best_depth else "#7f7f7f" for d in depths]
    ax1.bar(depths, infeas, color=colors)
    ax1.set_xlabel("maximum depth")
    ax1.set_ylabel("infeasible test predictions (%)")
    ax1.set_title("Feasibility")

    ax2.plot(depths, mses, marker="o", color="#1f77b4")
    best_mse = min(mses)
    ax2.plot([best_depth], [best_mse], marker="o", markersize=12,
             markerfacecolor="none", markeredgecolor="#d62728", linestyle="none")
    ax2.set_xlabel("maximum depth")
    ax2.set_ylabel("test MSE")
    ax2.set_title("Accuracy")

    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
