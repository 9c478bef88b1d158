"""Figures written next to the delimited outputs (headless backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def coverage_figure(table, path, nominal=0.95, floor=None):
    """Dot plot of empirical coverage per estimand with binomial 2-SE bars."""
    t = table.reset_index(drop=True)
    y = np.arange(len(t))
    cov = t["coverage"].to_numpy()
    se = np.sqrt(np.clip(cov * (1 - cov), 1e-12, None) / t["replicates"].to_numpy())
    fig, ax = plt.subplots(figsize=(7, 0.32 * len(t) + 1.2))
    ax.errorbar(cov, y, xerr=2 * se, fmt="o", color="C0", label="multiple imputation")
    if "cd_coverage" in t:
        ax.plot(t["cd_coverage"], y, "x", color="C1", label="before deletion")
    ax.axvline(nominal, color="k", lw=0.8)
    if floor is not None:
        ax.axvline(floor, color="C3", lw=0.8, ls="--")
    ax.set_yticks(y, t["estimand"], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("coverage of nominal %.0f%% interval" % (100 * nominal))
    ax.set_xlim(min(0.6, np.nanmin(cov) - 0.05), 1.0)
    ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def bias_figure(table, path, limit=None):
    """Standardized bias per estimand."""
    t = table.reset_index(drop=True)
    y = np.arange(len(t))
    fig, ax = plt.subplots(figsize=(7, 0.32 * len(t) + 1.2))
    ax.barh(y, t["std_bias"], color="C0")
    ax.axvline(0, color="k", lw=0.8)
    if limit is not None:
        for s in (-limit, limit):
            ax.axvline(s, color="C3", lw=0.8, ls="--")
    ax.set_yticks(y, t["estimand"], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("standardized bias")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def trace_figure(trace, path, columns=None, retained=None):
    """Per-sweep traces of selected diagnostics (default: means, log joint)."""
    sweeps = np.array([r["sweep"] for r in trace])
    if columns is None:
        keys = trace[0].keys()
        columns = [k for k in keys if k.endswith("_mean")]
        columns += [k for k in ("log_joint", "occupied_Z", "occupied_Hy") if k in keys]
    fig, axes = plt.subplots(len(columns), 1, figsize=(7, 1.6 * len(columns) + 0.5),
                             sharex=True, squeeze=False)
    for ax, col in zip(axes[:, 0], columns):
        ax.plot(sweeps, [r[col] for r in trace], lw=0.6)
        for s in retained or ():
            ax.axvline(s, color="C3", lw=0.5, alpha=0.6)
        ax.set_ylabel(col, fontsize=7)
    axes[-1, 0].set_xlabel("sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
