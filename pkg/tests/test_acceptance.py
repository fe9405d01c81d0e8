"""Acceptance suite: one test per exit criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.  The stability scans probe marginal loops on longer
horizons than the plotting experiments because the conservative divergence
thresholds need room to trip; a combination also counts as divergent when
its 100-step running-average cost is still climbing at the end (final/mid
ratio above 3), which is the figure-level meaning of a divergent cost.
"""

import math
import time

import numpy as np
import pytest

from switched_lqr_lab.core import NoiseModel, SystemParams, budget_cap
from switched_lqr_lab.dp import oracle_enumerate, solve_dp
from switched_lqr_lab.engine import (
    ControllerSpec,
    PolicySpec,
    calibrate_rate,
    run_batch,
    run_mc,
    symmetry_statistic,
)
from switched_lqr_lab.engine import _pilot_rate_threshold
from switched_lqr_lab.experiments import (
    calibrated_parameter,
    run_combo,
    simulate_all,
    solved_threshold_table,
    sweep_steady,
)
from switched_lqr_lab.lqr import (
    equivalent_cost_general,
    riccati_steady,
    steady_quadratic_residual,
)
from switched_lqr_lab.policies import build_periodic

GAUSS = NoiseModel.gaussian(10.0)
PHI = (1.0 + math.sqrt(5.0)) / 2.0

# figure-level divergence: the 100-step running average never settles
RATIO_LIMIT = 3.0


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# --------------------------------------------------------------------------
# 1. Riccati fixed point
# --------------------------------------------------------------------------

def test_criterion_1_riccati_fixed_point():
    p = SystemParams()
    riccati_steady(p)  # warm
    t0 = time.perf_counter()
    P, L = riccati_steady(p)
    elapsed = time.perf_counter() - t0
    ok = (abs(P - PHI) < 1e-9 and abs(L - 1.0 / PHI) < 1e-9
          and abs(steady_quadratic_residual(p, P)) < 1e-9 and elapsed < 1e-3)
    report("criterion 1: Riccati fixed point",
           ok, f"P={P:.12f} L={L:.12f} residual={steady_quadratic_residual(p, P):.1e} "
               f"t={elapsed*1e6:.0f}us")


# --------------------------------------------------------------------------
# 2. Periodic construction over the full grid
# --------------------------------------------------------------------------

def test_criterion_2_periodic_construction():
    t0 = time.perf_counter()
    checked = 0
    for n in range(10, 201):
        for tenth in range(1, 11):
            r_s = tenth / 10.0
            sched = build_periodic(n, r_s)
            q0 = budget_cap(n, r_s)
            assert len(sched.deltas) == q0
            assert sum(sched.deltas) == n
            assert max(sched.deltas) - min(sched.deltas) <= 1
            base = n // q0
            n_long = sum(1 for d in sched.deltas if d == base + 1)
            assert n_long == n - q0 * base  # unique feasible count
            stated_count = n - n * r_s * math.floor(1.0 / r_s)
            if abs(n * r_s - round(n * r_s)) < 1e-9 and math.floor(1.0 / r_s) == base:
                # the stated count is itself integer-feasible here
                assert n_long == round(stated_count)
            checked += 1
    elapsed = time.perf_counter() - t0
    report("criterion 2: periodic construction", elapsed < 1.0,
           f"{checked} (N, r_s) cells in {elapsed:.2f}s")


# --------------------------------------------------------------------------
# 3 + 4. DP against exhaustive enumeration; evenness
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_runs():
    rng = np.random.default_rng(20240917)
    runs = []
    t0 = time.perf_counter()
    for _ in range(24):
        n = int(rng.integers(3, 6))
        q0 = min(int(rng.integers(1, 3)), n - 2)
        if rng.random() < 0.5:
            scale = float(rng.uniform(0.5, 2.0))
            support, probs = [-scale, scale], [0.5, 0.5]
        else:
            if n >= 5:
                n = 4
            scale = float(rng.uniform(0.5, 2.0))
            p_mid = float(rng.uniform(0.2, 0.6))
            support = [-scale, 0.0, scale]
            probs = [(1 - p_mid) / 2, p_mid, (1 - p_mid) / 2]
        a = float(rng.uniform(0.5, 1.3))
        model = NoiseModel.discrete(support, probs)
        p = SystemParams(a=a, sigma_w=model.sigma, tau=1, rate=q0 / n + 1e-9, horizon=n)
        tables = solve_dp(p, model)
        rep = oracle_enumerate(p, support, probs)
        runs.append((p, model, tables, rep))
    return runs, time.perf_counter() - t0


def test_criterion_3_dp_vs_oracle(oracle_runs):
    runs, elapsed = oracle_runs
    worst_gap = 0.0
    all_thr = True
    all_compat = True
    for p, model, tables, rep in runs:
        worst_gap = max(worst_gap, abs(tables.value - rep.min_cost))
        all_thr &= rep.has_threshold_minimizer
        sig2 = model.sigma**2

        def decide(k, j, s2, tables=tables, sig2=sig2):
            alpha = tables.alpha.get((k, j))
            return 0 if alpha is None else int(s2 >= alpha * sig2 - 1e-12)

        all_compat &= rep.decisions_compatible(decide)
    ok = worst_gap < 1e-9 and all_thr and all_compat and elapsed < 30.0
    report("criterion 3: DP equals enumerated optimum", ok,
           f"{len(runs)} instances, worst gap {worst_gap:.2e}, "
           f"threshold minimizer {all_thr}, dp decisions optimal {all_compat}, "
           f"{elapsed:.1f}s")


def test_criterion_4_value_function_evenness(oracle_runs):
    runs, _ = oracle_runs
    worst_oracle = max(rep.evenness_gap for _, _, _, rep in runs)
    worst_density = max(t.density_evenness_gap for _, _, t, _ in runs)
    cont = solve_dp(SystemParams(sigma_w=1.0, horizon=12, rate=0.3),
                    NoiseModel.gaussian(1.0), grid_points=2049)
    ok = worst_oracle < 1e-10 and worst_density < 1e-10 \
        and cont.density_evenness_gap < 1e-10
    report("criterion 4: value-function and density evenness", ok,
           f"oracle {worst_oracle:.1e}, discrete densities {worst_density:.1e}, "
           f"grid densities {cont.density_evenness_gap:.1e}")


# --------------------------------------------------------------------------
# 5. Cost equivalence between the direct and reformulated objectives
# --------------------------------------------------------------------------

def test_criterion_5_cost_equivalence():
    t0 = time.perf_counter()
    p = SystemParams(horizon=200)
    results = {}
    table = solved_threshold_table(p, GAUSS)
    specs = {
        "opt": PolicySpec(kind="threshold_table", table=table),
        "per-imp": PolicySpec(kind="periodic"),
    }
    controllers = {"opt": "optimal", "per-imp": "impulsive"}
    ok = True
    details = []
    for name, spec in specs.items():
        batch = run_batch(p, GAUSS, spec, ControllerSpec(controllers[name]), 1000, 2024)
        direct = batch["stage_costs"].sum(axis=1) / 200 + batch["terminal_x"] ** 2 / 200
        equiv = np.array([equivalent_cost_general(p, float(row.mean()))
                          for row in batch["lxu_sq"]])
        diff = direct - equiv
        se = float(diff.std(ddof=1)) / math.sqrt(len(diff))
        results[name] = (abs(float(diff.mean())), 3 * se)
        ok &= abs(float(diff.mean())) < 3 * se
        details.append(f"{name}: |diff|={abs(diff.mean()):.3f} vs 3SE={3*se:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60.0
    report("criterion 5: direct vs reformulated cost", ok,
           "; ".join(details) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 6. Stability boundary reproduction
# --------------------------------------------------------------------------

def _running_ratio(label: str, p: SystemParams, runs: int = 100, seed: int = 7) -> float:
    st = run_combo(label, p, NoiseModel.gaussian(p.sigma_w), runs, seed)
    mid = st.running_avg[p.horizon // 2 - 1]
    return float(st.running_avg[-1] / mid) if mid > 0 else 1.0


def _fraction(label: str, p: SystemParams, probe: int, runs: int = 100, seed: int = 7) -> float:
    from dataclasses import replace
    pv = replace(p, horizon=probe)
    return run_combo(label, pv, NoiseModel.gaussian(p.sigma_w), runs, seed).diverged_fraction


def _diverges(label: str, p: SystemParams, probe: int = 4000) -> bool:
    if _running_ratio(label, p) > RATIO_LIMIT:
        return True
    return _fraction(label, p, probe) > 0.5


ZOH_LABELS = ("per-zoh", "rnd-zoh", "sym-zoh")


def test_criterion_6_stability_boundary():
    t0 = time.perf_counter()
    from dataclasses import replace

    # --- open-loop gain scan at r_s = 0.25
    a_grid = [0.5, 0.7, 0.85, 0.9, 0.95, 1.0, 1.2, 1.4]
    base = SystemParams(rate=0.25)
    frac_high = {
        (lbl, a): _fraction(lbl, replace(base, a=a), probe=4000)
        for lbl in ZOH_LABELS for a in (0.95, 1.0, 1.2, 1.4)
    }
    zoh_high_ok = all(v > 0.5 for v in frac_high.values())

    diverge_map = {(lbl, a): _diverges(lbl, replace(base, a=a))
                   for lbl in ZOH_LABELS for a in a_grid}
    boundary_a = min((a for a in a_grid
                      if all(diverge_map[(lbl, a)] for lbl in ZOH_LABELS)),
                     default=float("inf"))
    idx = a_grid.index(boundary_a)
    cutoff_a_ok = abs(a_grid[idx] - 0.9) <= 0.051 or \
        (idx > 0 and abs(a_grid[idx - 1] - 0.9) <= 0.051)

    # optimal (threshold-table) policy: stable across the whole range
    opt_fracs = {}
    for a in a_grid:
        pv = replace(base, a=a, horizon=200)
        st = run_mc(pv, NoiseModel.gaussian(pv.sigma_w),
                    PolicySpec(kind="threshold_table",
                               table=solved_threshold_table(pv, NoiseModel.gaussian(pv.sigma_w))),
                    ControllerSpec("optimal"), 100, 7)
        opt_fracs[a] = st.diverged_fraction
    opt_ok = all(v == 0.0 for v in opt_fracs.values())

    # --- switching-rate scan at a = 1
    r_grid = [0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
    base_r = SystemParams(a=1.0)
    rate_div = {(lbl, r): _diverges(lbl, replace(base_r, rate=r))
                for lbl in ("rnd-zoh", "sym-zoh") for r in r_grid}
    low_rate_ok = all(rate_div[(lbl, r)] for lbl in ("rnd-zoh", "sym-zoh")
                      for r in r_grid if r <= 0.35)
    cutoff_r = max((r for r in r_grid
                    if any(rate_div.get((lbl, r), False) for lbl in ("rnd-zoh", "sym-zoh"))),
                   default=0.0)
    cutoff_r_ok = abs(cutoff_r - 0.4) <= 0.051

    elapsed = time.perf_counter() - t0
    ok = zoh_high_ok and cutoff_a_ok and opt_ok and low_rate_ok and cutoff_r_ok \
        and elapsed < 300.0
    report("criterion 6: stability boundaries", ok,
           f"ZOH fractions>0.5 at a>=0.95: {zoh_high_ok}; all-ZOH a-cutoff {boundary_a} "
           f"(expected 0.9); opt diverged {max(opt_fracs.values())}; "
           f"ZOH diverges for r_s<=0.35: {low_rate_ok}; r-cutoff {cutoff_r} (expected 0.4); "
           f"{elapsed:.0f}s")


# --------------------------------------------------------------------------
# 7. Policy ordering at the nominal scenario
# --------------------------------------------------------------------------

def test_criterion_7_policy_ordering():
    t0 = time.perf_counter()
    p = SystemParams()
    stats = simulate_all(p, GAUSS, 100, 12345)
    opt = stats["opt"]
    ok = True
    lines = []
    for label, st in stats.items():
        if label == "opt" or st.diverged_fraction > 0.5:
            continue
        ok &= opt.steady_cost <= st.steady_cost
        sep = "separated" if opt.steady_cost + opt.steady_ci < st.steady_cost - st.steady_ci \
            else "overlapping"
        lines.append(f"{label}:{st.steady_cost:.0f}({sep})")
    elapsed = time.perf_counter() - t0
    ok &= opt.steady_cost <= stats["sym-imp"].steady_cost
    ok &= elapsed < 60.0
    report("criterion 7: optimal policy achieves the lowest steady cost", ok,
           f"opt={opt.steady_cost:.0f}; " + " ".join(sorted(lines)) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 8. Distribution (in)sensitivity across the rate sweep
# --------------------------------------------------------------------------

def test_criterion_8_distribution_insensitivity():
    t0 = time.perf_counter()
    p = SystemParams()
    rows = sweep_steady(p, "rate", [0.15, 0.25, 0.4, 0.6],
                        ["gaussian", "laplace", "uniform"], runs=100, seed=2024,
                        labels=["opt", "per-imp"])
    per_imp_ok = True
    for r in rows:
        if r.policy == "per-imp" and r.noise != "gaussian":
            per_imp_ok &= abs(r.norm_diff) < 2.0 * r.norm_diff_ci
    # the optimal policy interacts with the noise shape: paired comparison
    # against the Gaussian runs at small rates, common random numbers
    sens = sweep_steady(p, "rate", [0.1, 0.15], ["gaussian", "laplace"],
                        runs=600, seed=515, labels=["opt"])
    separated = False
    zs = []
    for r in sens:
        if r.noise == "laplace" and r.paired_ci:
            zs.append(abs(r.paired_diff) / r.paired_ci)
            separated |= abs(r.paired_diff) > r.paired_ci
    elapsed = time.perf_counter() - t0
    ok = per_imp_ok and separated and elapsed < 300.0
    report("criterion 8: noise-distribution (in)sensitivity", ok,
           f"periodic-impulsive insensitive: {per_imp_ok}; "
           f"opt laplace-vs-gauss |z| at small rates: "
           + ",".join(f"{z:.2f}" for z in zs) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 9. Symmetry diagnostic
# --------------------------------------------------------------------------

def test_criterion_9_symmetry_diagnostic():
    t0 = time.perf_counter()
    p = SystemParams()
    theta = calibrated_parameter("threshold", p, GAUSS)
    gamma = calibrated_parameter("state_based", p, GAUSS)
    specs = {
        "bernoulli": PolicySpec(kind="bernoulli"),
        "periodic": PolicySpec(kind="periodic"),
        "threshold": PolicySpec(kind="threshold_const", theta=theta),
    }
    sym_ok = True
    details = []
    for name, spec in specs.items():
        stats = symmetry_statistic(spec, p, GAUSS, runs=10_000, seed=99)
        worst = max(abs(mean) / se for mean, se, _ in stats.values())
        sym_ok &= all(abs(mean) <= 3 * se for mean, se, _ in stats.values())
        details.append(f"{name}|t|max={worst:.1f}")
    state_stats = symmetry_statistic(PolicySpec(kind="state_based", gamma=gamma),
                                     p, GAUSS, runs=10_000, seed=99)
    state_ts = {mv: abs(mean) / se for mv, (mean, se, _) in state_stats.items()}
    state_ok = any(t > 3.0 for mv, t in state_ts.items() if mv >= 2)
    elapsed = time.perf_counter() - t0
    ok = sym_ok and state_ok and elapsed < 60.0
    report("criterion 9: silence is uninformative only for symmetric policies", ok,
           "; ".join(details) + f"; state |t|: "
           + ",".join(f"m={mv}:{t:.0f}" for mv, t in sorted(state_ts.items()))
           + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 10. Rate calibration
# --------------------------------------------------------------------------

def test_criterion_10_calibration():
    t0 = time.perf_counter()
    p = SystemParams()
    ok = True
    details = []
    for target in (0.25, 0.4):
        theta = calibrate_rate("threshold", p, GAUSS, target)
        pilot = _pilot_rate_threshold(theta, p, GAUSS)
        ok &= abs(pilot - target) <= 0.01
        details.append(f"target {target}: theta={theta:.1f} pilot={pilot:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    report("criterion 10: rate calibration", ok, "; ".join(details) + f"; {elapsed:.1f}s")
