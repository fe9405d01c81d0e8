"""Command-line front end.

Subcommands: riccati, solve-dp, simulate, sweep, calibrate, oracle-check.
A scenario is a single JSON document; flags override config fields.  Exit
codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import (
    CalibrationFailure,
    EmptyEventError,
    ExplosionGuard,
    FixedPointDivergence,
    LabError,
    MassUnderflow,
    NoiseModel,
    NonConvergenceError,
    SystemParams,
    ValidationError,
)
from .csvio import write_csv
from .dp import oracle_enumerate, solve_dp
from .engine import calibrate_rate
from .experiments import simulate_all, sweep_steady
from .lqr import riccati_finite

_NUMERIC_ERRORS = (NonConvergenceError, CalibrationFailure, MassUnderflow,
                   EmptyEventError, ExplosionGuard, FixedPointDivergence)

DEFAULTS = {
    "a": 1.0, "b": 1.0, "q": 1.0, "r": 1.0, "sigma_w": 10.0,
    "tau": 1, "rate": 0.4, "horizon": 100,
    "noise": "gaussian", "runs": 100, "seed": 12345, "steady_window": 20,
}

_PARAM_KEYS = ("a", "b", "q", "r", "sigma_w", "tau", "rate", "horizon")


def load_scenario(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for key in ("a", "b", "q", "r", "sigma_w", "rate", "tau", "horizon",
                "runs", "seed", "noise"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def scenario_params(cfg: dict) -> SystemParams:
    kw = {k: cfg[k] for k in _PARAM_KEYS}
    kw["tau"] = int(kw["tau"])
    kw["horizon"] = int(kw["horizon"])
    return SystemParams(**kw)


def dump_scenario(cfg: dict) -> str:
    """Serialize a scenario; parse -> serialize -> parse is the identity."""
    return json.dumps({k: cfg[k] for k in sorted(cfg)}, indent=2)


def scenario_noise(cfg: dict) -> NoiseModel:
    return NoiseModel.of_kind(cfg["noise"], cfg["sigma_w"])


def _out_path(args, name: str) -> str | None:
    if not getattr(args, "out", None):
        return None
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        start, stop, step_s = spec.split(":")
        grid = list(np.arange(float(start), float(stop) + 1e-12, float(step_s)))
        return [round(v, 10) for v in grid]
    return [float(x) for x in spec.split(",") if x]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_riccati(args) -> int:
    cfg = load_scenario(args)
    p = scenario_params(cfg)
    sol = riccati_finite(p)
    print(f"P = {sol.p_ss:.10f}")
    print(f"L = {sol.gain_ss:.10f}")
    path = _out_path(args, "riccati.csv")
    if path:
        rows = [(k, float(sol.p_seq[k]), float(sol.gain_seq[k]) if k < p.horizon else "")
                for k in range(p.horizon + 1)]
        write_csv(path, ["k", "P", "L"], rows)
        print(f"wrote {path}")
    return 0


def cmd_solve_dp(args) -> int:
    cfg = load_scenario(args)
    p = scenario_params(cfg)
    model = scenario_noise(cfg)
    tables = solve_dp(p, model, grid_points=args.grid_points)
    print(f"stages = {tables.stages}, budget = {tables.budget}")
    print(f"value = {tables.value:.10f}")
    path = _out_path(args, "dp_tables.csv")
    if path:
        with open(path, "w") as fh:
            fh.write(tables.to_csv())
        print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_scenario(args)
    p = scenario_params(cfg)
    model = scenario_noise(cfg)
    labels = args.policies.split(",") if args.policies else None
    stats = simulate_all(p, model, int(cfg["runs"]), int(cfg["seed"]), labels,
                         steady_window=int(cfg["steady_window"]))
    rows = []
    for label, st in stats.items():
        for k in range(st.steps):
            rows.append((label, k, float(st.running_avg[k]), float(st.running_ci[k]),
                         st.switch_rate, st.diverged_fraction))
        print(f"{label:8s} steady={st.steady_cost:12.4f} rate={st.switch_rate:.3f} "
              f"diverged={st.diverged_fraction:.2f}")
    path = _out_path(args, "simulate.csv")
    if path:
        write_csv(path, ["policy", "step", "mean_cost", "ci", "rate", "diverged_fraction"], rows)
        print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_scenario(args)
    p = scenario_params(cfg)
    grid = parse_grid(args.grid)
    noises = args.noise.split(",") if args.noise else [cfg["noise"]]
    labels = args.policies.split(",") if args.policies else None
    rows = sweep_steady(p, args.axis, grid, noises, int(cfg["runs"]), int(cfg["seed"]),
                        labels, steady_window=int(cfg["steady_window"]))
    out_rows = [(r.axis, r.value, r.noise, r.policy, r.steady_cost, r.ci,
                 r.diverged_fraction, r.norm_diff, r.norm_diff_ci) for r in rows]
    path = _out_path(args, "sweep.csv")
    if path:
        write_csv(path, ["axis", "value", "noise", "policy", "steady_cost", "ci",
                         "diverged_fraction", "norm_diff", "norm_diff_ci"], out_rows)
        print(f"wrote {path}")
    else:
        for r in rows[:20]:
            print(r)
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_scenario(args)
    p = scenario_params(cfg)
    model = scenario_noise(cfg)
    value = calibrate_rate(args.family, p, model, cfg["rate"])
    name = "theta" if args.family == "threshold" else "gamma"
    print(f"{name} = {value:.6f}")
    path = _out_path(args, "calibrate.csv")
    if path:
        write_csv(path, ["family", "target", "parameter"],
                  [(args.family, cfg["rate"], value)])
        print(f"wrote {path}")
    return 0


def cmd_oracle_check(args) -> int:
    cfg = load_scenario(args)
    cfg.update({"sigma_w": 1.0})
    support = [float(x) for x in args.support.split(",")]
    probs = [float(x) for x in args.probs.split(",")]
    model = NoiseModel.discrete(support, probs)
    p = SystemParams(a=cfg["a"], b=cfg["b"], q=cfg["q"], r=cfg["r"],
                     sigma_w=model.sigma, tau=int(cfg["tau"]), rate=cfg["rate"],
                     horizon=int(cfg["horizon"]))
    tables = solve_dp(p, model)
    report = oracle_enumerate(p, support, probs)
    gap = abs(tables.value - report.min_cost)
    print(f"dp value          = {tables.value:.12f}")
    print(f"enumerated optimum = {report.min_cost:.12f}")
    print(f"gap               = {gap:.3e}")
    print(f"threshold minimizer exists: {report.has_threshold_minimizer}")
    print(f"nodes visited     = {report.nodes_visited}")
    for (k, j), a in sorted(tables.alpha.items()):
        print(f"  alpha[{k},{j}] = {a:.6f}")
    return 0 if gap < 1e-9 and report.has_threshold_minimizer else 3


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="switched-lqr-lab",
                                 description="budget-constrained switched-LQR laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario JSON path")
        sp.add_argument("--out", help="output directory for CSV files")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--noise", help="gaussian|uniform|laplace (comma list for sweep)")
        for name in ("a", "b", "q", "r", "sigma_w", "rate"):
            sp.add_argument(f"--{name}", type=float)
        sp.add_argument("--tau", type=int)
        sp.add_argument("--horizon", type=int)

    common(sub.add_parser("riccati", help="steady-state and finite-horizon gains"))

    sp = sub.add_parser("solve-dp", help="solve the switching dynamic program")
    common(sp)
    sp.add_argument("--grid-points", type=int, default=4097)

    sp = sub.add_parser("simulate", help="running-average cost for all combinations")
    common(sp)
    sp.add_argument("--policies", help="comma list of combination labels")

    sp = sub.add_parser("sweep", help="steady-state cost over a parameter grid")
    common(sp)
    sp.add_argument("--axis", choices=("a", "rate", "sigma"), required=True)
    sp.add_argument("--grid", required=True, help="start:stop:step or comma list")
    sp.add_argument("--policies", help="comma list of combination labels")

    sp = sub.add_parser("calibrate", help="match a policy parameter to the target rate")
    common(sp)
    sp.add_argument("--family", choices=("threshold", "state_based"), default="threshold")

    sp = sub.add_parser("oracle-check", help="verify the DP against exhaustive enumeration")
    common(sp)
    sp.add_argument("--support", default="-1,1", help="comma list of noise atoms")
    sp.add_argument("--probs", default="0.5,0.5", help="comma list of atom probabilities")

    return ap


_HANDLERS = {
    "riccati": cmd_riccati,
    "solve-dp": cmd_solve_dp,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
