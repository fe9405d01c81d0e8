"""Experiment orchestration: policy/controller combinations and sweeps.

The combination labels follow the figure legends: the switching half is
``rnd`` (Bernoulli), ``per`` (periodic), ``sym`` (calibrated symmetric
threshold) or ``state``; the controller half is ``opt``, ``zoh`` or
``imp``.  ``opt`` alone is the symmetric threshold policy with the optimal
controller.  Threshold and state-based parameters are calibrated to the
scenario's target rate and cached per parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import NoiseModel, SystemParams, ValidationError
from .dp import solve_dp
from .engine import ControllerSpec, PolicySpec, RunStats, calibrate_rate, run_mc

STANDARD_COMBOS: tuple[tuple[str, str, str], ...] = (
    ("opt", "threshold_table", "optimal"),
    ("sym-opt", "threshold_const", "optimal"),
    ("sym-imp", "threshold_const", "impulsive"),
    ("sym-zoh", "threshold_const", "zoh"),
    ("per-opt", "periodic", "optimal"),
    ("per-imp", "periodic", "impulsive"),
    ("per-zoh", "periodic", "zoh"),
    ("rnd-opt", "bernoulli", "optimal"),
    ("rnd-imp", "bernoulli", "impulsive"),
    ("rnd-zoh", "bernoulli", "zoh"),
    ("state", "state_based", "state_based"),
)

_CAL_CACHE: dict[tuple, float] = {}
_TABLE_CACHE: dict[tuple, object] = {}
_TABLE_GRID = 2049


def solved_threshold_table(p: SystemParams, model: NoiseModel):
    """DP threshold table for this parameter set, solved once and cached."""
    key = (model.kind, round(model.sigma, 12), p.a, p.b, p.q, p.r, p.tau,
           p.rate, p.horizon)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = solve_dp(p, model, grid_points=_TABLE_GRID).threshold_table()
    return _TABLE_CACHE[key]


def calibrated_parameter(family: str, p: SystemParams, model: NoiseModel,
                         target: float | None = None) -> float:
    key = (family, model.kind, round(model.sigma, 12), p.a, p.b, p.q, p.r,
           p.tau, round(target if target is not None else p.rate, 12))
    if key not in _CAL_CACHE:
        _CAL_CACHE[key] = calibrate_rate(family, p, model,
                                         target if target is not None else p.rate)
    return _CAL_CACHE[key]


def make_policy_spec(switching: str, p: SystemParams, model: NoiseModel,
                     theta: float | None = None, gamma: float | None = None,
                     table=None) -> PolicySpec:
    if switching in ("bernoulli", "periodic"):
        return PolicySpec(kind=switching)
    if switching == "threshold_const":
        if theta is None:
            theta = calibrated_parameter("threshold", p, model)
        return PolicySpec(kind="threshold_const", theta=theta)
    if switching == "threshold_table":
        if table is None:
            table = solved_threshold_table(p, model)
        return PolicySpec(kind="threshold_table", table=table)
    if switching == "state_based":
        if gamma is None:
            gamma = calibrated_parameter("state_based", p, model)
        return PolicySpec(kind="state_based", gamma=gamma)
    raise ValidationError(f"unknown switching kind {switching!r}")


def run_combo(label: str, p: SystemParams, model: NoiseModel, runs: int, seed: int,
              steady_window: int = 20, theta: float | None = None,
              gamma: float | None = None, table=None) -> RunStats:
    combos = {name: (sw, ctrl) for name, sw, ctrl in STANDARD_COMBOS}
    combos["table-opt"] = ("threshold_table", "optimal")
    if label not in combos:
        raise ValidationError(f"unknown combination {label!r}")
    switching, controller = combos[label]
    if controller == "state_based" and switching != "state_based":
        raise ValidationError("state-based controller pairs with state-based switching")
    policy = make_policy_spec(switching, p, model, theta=theta, gamma=gamma, table=table)
    return run_mc(p, model, policy, ControllerSpec(controller), runs, seed,
                  steady_window=steady_window)


def simulate_all(p: SystemParams, model: NoiseModel, runs: int, seed: int,
                 labels=None, steady_window: int = 20) -> dict[str, RunStats]:
    labels = [name for name, _, _ in STANDARD_COMBOS] if labels is None else list(labels)
    return {label: run_combo(label, p, model, runs, seed, steady_window)
            for label in labels}


@dataclass
class SweepRow:
    axis: str
    value: float
    noise: str
    policy: str
    steady_cost: float
    ci: float
    diverged_fraction: float
    norm_diff: float | None = None
    norm_diff_ci: float | None = None
    # paired against the Gaussian run sharing the same uniforms
    paired_diff: float | None = None
    paired_ci: float | None = None


def _with_axis(p: SystemParams, axis: str, value: float) -> SystemParams:
    if axis == "a":
        return replace(p, a=value)
    if axis == "rate":
        return replace(p, rate=value)
    if axis == "sigma":
        return replace(p, sigma_w=value)
    raise ValidationError(f"unknown sweep axis {axis!r}")


def sweep_steady(p: SystemParams, axis: str, grid, noise_kinds, runs: int, seed: int,
                 labels=None, steady_window: int = 20) -> list[SweepRow]:
    """Steady-state cost per policy over a parameter grid and noise kinds.

    When several noise kinds are requested, non-Gaussian rows also carry the
    steady-cost difference relative to the Gaussian run, normalized by the
    Gaussian cost.
    """
    if not grid:
        raise ValidationError("sweep grid must be nonempty")
    labels = [name for name, _, _ in STANDARD_COMBOS] if labels is None else list(labels)
    rows: list[SweepRow] = []
    for value in grid:
        pv = _with_axis(p, axis, float(value))
        by_noise: dict[str, dict[str, RunStats]] = {}
        for kind in noise_kinds:
            model = NoiseModel.of_kind(kind, pv.sigma_w)
            by_noise[kind] = simulate_all(pv, model, runs, seed, labels, steady_window)
        for kind in noise_kinds:
            for label in labels:
                st = by_noise[kind][label]
                row = SweepRow(axis=axis, value=float(value), noise=kind, policy=label,
                               steady_cost=st.steady_cost, ci=st.steady_ci,
                               diverged_fraction=st.diverged_fraction)
                if kind != "gaussian" and "gaussian" in by_noise:
                    base = by_noise["gaussian"][label]
                    if base.steady_cost > 0 and st.steady_cost < float("inf") \
                            and base.steady_cost < float("inf"):
                        row.norm_diff = (st.steady_cost - base.steady_cost) / base.steady_cost
                        row.norm_diff_ci = (st.steady_ci**2 + base.steady_ci**2) ** 0.5 \
                            / base.steady_cost
                        both = np.isfinite(st.steady_per_run) \
                            & np.isfinite(base.steady_per_run)
                        if both.sum() > 1:
                            diff = (st.steady_per_run[both] - base.steady_per_run[both]) \
                                / base.steady_cost
                            row.paired_diff = float(diff.mean())
                            row.paired_ci = 1.96 * float(diff.std(ddof=1)) \
                                / float(both.sum()) ** 0.5
                rows.append(row)
    return rows


def stability_scan(p: SystemParams, axis: str, grid, labels, runs: int, seed: int,
                   probe_horizon: int = 400) -> dict[tuple[str, float], float]:
    """Divergence fraction per (policy, grid value) on a longer probe horizon.

    Marginally unstable loops need more than the plotting horizon to trip
    the conservative divergence thresholds, so the scan probes further.
    """
    out: dict[tuple[str, float], float] = {}
    for value in grid:
        pv = replace(_with_axis(p, axis, float(value)), horizon=probe_horizon)
        for label in labels:
            st = run_combo(label, pv, NoiseModel.gaussian(pv.sigma_w), runs, seed)
            out[(label, float(value))] = st.diverged_fraction
    return out
