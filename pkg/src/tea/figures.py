"""Figure rendering for report(). File output only, never interactive."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import metrics


def render_report(report_dir, grid, labels, median_curves, runs, alphas) -> dict:
    written = {
        "median_curve_png": _median_curve_figure(
            report_dir / "median_curve.png", grid, labels, median_curves
        ),
        "asr_png": _asr_figure(report_dir / "asr.png", grid, labels, runs, alphas),
        "reduction_cdf_png": _cdf_figure(
            report_dir / "reduction_cdf.png", grid, labels, runs
        ),
        "ablation_png": _ablation_figure(
            report_dir / "ablation.png", grid, labels, runs
        ),
    }
    return written


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _median_curve_figure(path, grid, labels, median_curves):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in labels:
        ax.plot(grid, median_curves[label].distances, marker="o", label=label)
    ax.set_xlabel("queries")
    ax.set_ylabel("median l2 distance to source")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def _asr_figure(path, grid, labels, runs, alphas):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in labels:
        for alpha in alphas:
            values = [metrics.asr(runs[label], alpha, g) for g in grid]
            ax.plot(grid, values, marker="o", label=f"{label} @ {int(alpha)}%")
    ax.set_xlabel("queries")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def _cdf_figure(path, grid, labels, runs):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in labels:
        reductions = sorted(
            metrics.pct_reduction(r.initial_distance, r.curve.value_at(grid[-1]))
            for r in runs[label]
        )
        cdf = np.arange(1, len(reductions) + 1) / len(reductions)
        ax.step(reductions, cdf, where="post", label=label)
    ax.set_xlabel(f"percent reduction at {int(grid[-1])} queries")
    ax.set_ylabel("fraction of pairs")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def _ablation_figure(path, grid, labels, runs):
    fig, ax = plt.subplots(figsize=(6, 4))
    means = [
        float(
            np.mean(
                [
                    metrics.pct_reduction(r.initial_distance, r.curve.value_at(grid[-1]))
                    for r in runs[label]
                ]
            )
        )
        for label in labels
    ]
    ax.bar(labels, means)
    ax.set_ylabel(f"mean percent reduction at {int(grid[-1])} queries")
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)
