"""SVG figures for calibration, evaluation and training reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt + no date keeps SVG output byte-identical across runs
RC = {
    "svg.hashsalt": "masgan",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(RC):
        fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def _fig(w=5.0, h=3.6):
    with plt.rc_context(RC):
        return plt.subplots(figsize=(w, h))


def plot_heatmap(matrix, grid, best_index, path) -> Path:
    """Mean-score heatmap, rows N and columns lambda; the argmax cell is boxed."""
    m = np.asarray(matrix, dtype=np.float64)
    fig, ax = _fig()
    with plt.rc_context(RC):
        im = ax.imshow(m, origin="lower", cmap="viridis", aspect="auto")
        ax.set_xticks(range(m.shape[1]), [f"{x:.3g}" for x in grid.lambda_values])
        ax.set_yticks(range(m.shape[0]), [str(n) for n in grid.n_values])
        ax.set_xlabel("value agent arrival rate λ (1/ns)")
        ax.set_ylabel("noise agents N")
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                ax.text(j, i, f"{m[i, j]:.3f}", ha="center", va="center", color="w", fontsize=7)
        bi, bj = best_index
        rect = plt.Rectangle((bj - 0.5, bi - 0.5), 1, 1, fill=False, ec="red", lw=2)
        rect.set_gid(f"argmax-row{bi}-col{bj}")
        ax.add_patch(rect)
        ax.set_title(f"mean realism score, argmax N={grid.n_values[bi]}, λ={grid.lambda_values[bj]:.3g}")
        fig.colorbar(im, ax=ax, label="score")
        fig.tight_layout()
    return _save(fig, path)


def plot_kdes(densities: dict, path, xlabel="realism score") -> Path:
    """Overlayed density curves; ``densities`` maps label to DensityEstimate."""
    fig, ax = _fig()
    with plt.rc_context(RC):
        for label, d in densities.items():
            ax.plot(d.grid, d.density, label=label, lw=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        ax.legend(frameon=False)
        fig.tight_layout()
    return _save(fig, path)


def plot_return_histograms(stats: dict, path) -> Path:
    """One panel per horizon; ``stats`` maps horizon to ReturnStats."""
    hs = sorted(stats)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(hs), figsize=(3.2 * len(hs), 3.0), squeeze=False)
        for ax, h in zip(axes[0], hs):
            s = stats[h]
            ax.stairs(s.hist_counts, s.hist_edges, fill=True, alpha=0.6)
            ax.set_title(f"{h}-bar returns, excess kurtosis {s.excess_kurtosis:.2f}")
            ax.set_xlabel("log return")
        axes[0][0].set_ylabel("count")
        fig.tight_layout()
    return _save(fig, path)


def plot_training_curves(report, path) -> Path:
    fig, ax = _fig(5.5, 3.4)
    with plt.rc_context(RC):
        it = report.column("iter")
        ax.plot(it, report.column("critic_loss"), lw=0.8, label="critic loss")
        ax.plot(it, report.column("gen_loss"), lw=0.8, label="generator loss")
        ax.set_xlabel("iteration")
        ax2 = ax.twinx()
        ax2.plot(it, report.column("interp_grad_norm"), lw=0.8, color="k", alpha=0.5, label="interpolate grad norm")
        ax2.set_ylabel("grad norm")
        ax.legend(frameon=False, loc="upper left")
        fig.tight_layout()
    return _save(fig, path)
