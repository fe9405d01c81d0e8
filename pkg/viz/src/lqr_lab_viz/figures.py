"""Figure builders: one per figure kind, all pure functions of the CSV rows."""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import as_float, read_rows

UNSTABLE_CUT = 0.5
_SAVE_KW = dict(dpi=110, metadata={"Software": "lqr-lab-viz"})


@dataclass
class FigureSpec:
    inputs: list[str]
    kind: str                      # running_avg | sweep | normalized_diff | dp_lattice
    output: str
    policies: list[str] = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""


def render(spec: FigureSpec):
    """Build and save the requested figure; returns the matplotlib Figure."""
    builders = {
        "running_avg": build_running_avg,
        "sweep": build_sweep,
        "normalized_diff": build_normalized_diff,
        "dp_lattice": build_dp_lattice,
    }
    if spec.kind not in builders:
        raise ValueError(f"unknown figure kind {spec.kind!r}")
    fig = builders[spec.kind](spec)
    fig.savefig(spec.output, **_SAVE_KW)
    plt.close(fig)
    return fig


def _keep(policy: str, spec: FigureSpec) -> bool:
    return not spec.policies or policy in spec.policies


def build_running_avg(spec: FigureSpec):
    rows = read_rows(spec.inputs[0],
                     ("policy", "step", "mean_cost", "ci", "diverged_fraction"))
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    by_policy: dict[str, list[dict]] = {}
    for r in rows:
        if _keep(r["policy"], spec):
            by_policy.setdefault(r["policy"], []).append(r)
    for policy, recs in by_policy.items():
        recs.sort(key=lambda r: int(r["step"]))
        steps = np.array([int(r["step"]) for r in recs])
        mean = np.array([as_float(r["mean_cost"]) for r in recs])
        ci = np.array([as_float(r["ci"], 0.0) for r in recs])
        unstable = as_float(recs[0]["diverged_fraction"], 0.0) > UNSTABLE_CUT
        label = policy + (" (unstable)" if unstable else "")
        style = "--" if unstable else "-"
        line, = ax.plot(steps, mean, style, label=label)
        ax.fill_between(steps, mean - ci, mean + ci, alpha=0.25,
                        color=line.get_color(), linewidth=0)
    ax.set_xlabel(spec.xlabel or "step")
    ax.set_ylabel(spec.ylabel or "running-average cost")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_sweep(spec: FigureSpec):
    rows = read_rows(spec.inputs[0],
                     ("axis", "value", "noise", "policy", "steady_cost", "ci",
                      "diverged_fraction"))
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    axis_name = rows[0]["axis"]
    noises = sorted({r["noise"] for r in rows})
    for noise in noises:
        for policy in sorted({r["policy"] for r in rows if _keep(r["policy"], spec)}):
            recs = [r for r in rows if r["policy"] == policy and r["noise"] == noise]
            if not recs:
                continue
            recs.sort(key=lambda r: as_float(r["value"]))
            x = np.array([as_float(r["value"]) for r in recs])
            y = np.array([as_float(r["steady_cost"]) for r in recs])
            ci = np.array([as_float(r["ci"], 0.0) for r in recs])
            bad = np.array([as_float(r["diverged_fraction"], 0.0) > UNSTABLE_CUT
                            for r in recs])
            label = policy if len(noises) == 1 else f"{policy} ({noise})"
            line, = ax.plot(x[~bad], y[~bad], "-o", ms=3, label=label)
            ax.fill_between(x[~bad], (y - ci)[~bad], (y + ci)[~bad], alpha=0.25,
                            color=line.get_color(), linewidth=0)
            if bad.any():
                ax.plot(x[bad], np.full(bad.sum(), np.nanmax(y[~bad]) if (~bad).any()
                                        else 1.0), "x", color=line.get_color(),
                        label=f"{label} unstable")
    ax.set_xlabel(spec.xlabel or axis_name)
    ax.set_ylabel(spec.ylabel or "steady-state cost")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_normalized_diff(spec: FigureSpec):
    rows = read_rows(spec.inputs[0],
                     ("axis", "value", "noise", "policy", "norm_diff", "norm_diff_ci"))
    rows = [r for r in rows if r["norm_diff"] not in ("", None)]
    if not rows:
        raise ValueError("no normalized-difference rows; sweep needs several noise kinds")
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    axis_name = rows[0]["axis"]
    for noise in sorted({r["noise"] for r in rows}):
        for policy in sorted({r["policy"] for r in rows if _keep(r["policy"], spec)}):
            recs = [r for r in rows if r["policy"] == policy and r["noise"] == noise]
            if not recs:
                continue
            recs.sort(key=lambda r: as_float(r["value"]))
            x = np.array([as_float(r["value"]) for r in recs])
            y = np.array([as_float(r["norm_diff"]) for r in recs])
            ci = np.array([as_float(r["norm_diff_ci"], 0.0) for r in recs])
            line, = ax.plot(x, y, "-o", ms=3, label=f"{policy}: {noise} vs gaussian")
            ax.fill_between(x, y - ci, y + ci, alpha=0.25, color=line.get_color(),
                            linewidth=0)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel(spec.xlabel or axis_name)
    ax.set_ylabel(spec.ylabel or "normalized steady-cost difference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_dp_lattice(spec: FigureSpec):
    rows = read_rows(spec.inputs[0], ("k", "j", "alpha"))
    cells = {(int(r["k"]), int(r["j"])): as_float(r["alpha"]) for r in rows}
    stages = max(k for k, _ in cells) + 1
    fig, ax = plt.subplots(figsize=(1.1 * stages + 2.0, 4.0))
    for (k, j), alpha in cells.items():
        # no-switch transition keeps the budget
        if (k + 1, j) in cells or k + 1 == stages:
            ax.annotate("", xy=(k + 1, j), xytext=(k, j),
                        arrowprops=dict(arrowstyle="->", color="steelblue", lw=1.0))
        if j >= 1 and ((k + 1, j - 1) in cells or k + 1 == stages):
            ax.annotate("", xy=(k + 1, j - 1), xytext=(k, j),
                        arrowprops=dict(arrowstyle="->", color="seagreen", lw=1.0))
        if j == 0:
            # switching with an exhausted budget is infeasible
            ax.annotate("", xy=(k + 0.8, j - 0.55), xytext=(k, j),
                        arrowprops=dict(arrowstyle="->", color="red", lw=1.2,
                                        linestyle="--"))
        ax.plot([k], [j], "o", color="black", ms=4)
        if not math_isnan(alpha):
            ax.annotate(f"{alpha:.2f}", (k, j), textcoords="offset points",
                        xytext=(0, 6), fontsize=6, ha="center")
    ax.set_xlabel(spec.xlabel or "stage k")
    ax.set_ylabel(spec.ylabel or "remaining budget")
    ax.set_ylim(-1.2, max(j for _, j in cells) + 0.8)
    ax.set_xticks(range(stages + 1))
    fig.tight_layout()
    return fig


def math_isnan(x: float) -> bool:
    return x != x
