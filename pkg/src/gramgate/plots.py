"""Figure rendering for the report path.

Each function takes rows as read back from the corresponding CSV and
writes one PNG next to the delimited output. Rendering is headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

FIG_DPI = 150


def _grouped(rows: Sequence[Mapping], key: str) -> dict:
    out: dict = {}
    for row in rows:
        out.setdefault(row[key], []).append(row)
    return out


def render_calibration_figures(rows: Sequence[Mapping], outdir) -> list[Path]:
    """Risk-versus-budget and threshold-stability figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_cal = _grouped(rows, "calibrator")
    paths = []

    fig, ax = plt.subplots(figsize=(5.5, 4))
    alphas_all = sorted({row["alpha"] for row in rows})
    ax.plot(alphas_all, alphas_all, "k--", linewidth=1, label="risk = budget")
    for name, cal_rows in sorted(by_cal.items()):
        cal_rows = sorted(cal_rows, key=lambda r: r["alpha"])
        alphas = [r["alpha"] for r in cal_rows]
        risks = [r["mean_empirical_risk"] for r in cal_rows]
        errs = [2 * r["risk_se"] for r in cal_rows]
        ax.errorbar(alphas, risks, yerr=errs, marker="o", capsize=3, label=name)
    ax.set_xlabel(r"risk budget $\alpha$")
    ax.set_ylabel("mean fresh-set risk")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = outdir / "risk_vs_alpha.png"
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, cal_rows in sorted(by_cal.items()):
        cal_rows = sorted(cal_rows, key=lambda r: r["alpha"])
        ax.plot(
            [r["alpha"] for r in cal_rows],
            [r["lambda_se"] for r in cal_rows],
            marker="o",
            label=name,
        )
    ax.set_xlabel(r"risk budget $\alpha$")
    ax.set_ylabel(r"SE of $\hat\lambda$")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = outdir / "lambda_stability.png"
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    paths.append(path)
    return paths


def render_fs_reduction(rows: Sequence[Mapping], outdir) -> list[Path]:
    """Severity reduction bars per budget, one group per policy."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    by_policy = _grouped(rows, "policy")
    width = 0.8 / max(len(by_policy), 1)
    alphas = sorted({row["alpha"] for row in rows})
    centers = {a: i for i, a in enumerate(alphas)}
    for pi, (policy, policy_rows) in enumerate(sorted(by_policy.items())):
        xs, ys = [], []
        for row in sorted(policy_rows, key=lambda r: r["alpha"]):
            value = row["fs_reduction_pct"]
            if isinstance(value, float) and value != value:  # NaN cell
                continue
            xs.append(centers[row["alpha"]] + (pi - (len(by_policy) - 1) / 2) * width)
            ys.append(value)
        ax.bar(xs, ys, width=width, label=str(policy))
    ax.set_xticks(range(len(alphas)))
    ax.set_xticklabels([f"{a:g}" for a in alphas])
    ax.set_xlabel(r"risk budget $\alpha$")
    ax.set_ylabel("severity reduction (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = outdir / "fs_reduction.png"
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return [path]


def render_clt(rows: Sequence[Mapping], outdir) -> list[Path]:
    """KS distance of the standardized mean loss against batch count."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    usable = [r for r in rows if not r.get("zero_variance")]
    fig, ax = plt.subplots(figsize=(5, 4))
    usable = sorted(usable, key=lambda r: r["G"])
    ax.plot([r["G"] for r in usable], [r["ks_distance"] for r in usable], marker="o")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("batches G")
    ax.set_ylabel("KS distance to standard normal")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    path = outdir / "clt_ks.png"
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return [path]


def render_moments(rows: Sequence[Mapping], outdir) -> list[Path]:
    """Empirical versus closed-form variance of the weighted batch loss."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    idx = range(len(rows))
    ax.bar([i - 0.2 for i in idx], [r["var_closed"] for r in rows], width=0.4, label="closed form")
    ax.bar([i + 0.2 for i in idx], [r["var_empirical"] for r in rows], width=0.4, label="empirical")
    ax.set_xticks(list(idx))
    ax.set_xticklabels([f"eta={r['eta']:g}" for r in rows])
    ax.set_ylabel("Var of weighted batch loss")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = outdir / "moments.png"
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return [path]
