"""Closed-loop simulator, Monte Carlo harness, and rate calibration.

Every run follows the same per-step order: the switch observes the plant
and decides, the pair enters the delay pipeline, the pipeline emits the
tau-old pair (possibly re-anchoring the estimator), the controller acts,
the stage cost accrues, and only then does the plant evolve.  That order
makes the delayed observation Y_k = D_{k-tau} X_{k-tau} literal.

``run_mc`` dispatches to a vectorized batch path (bit-identical to the
scalar reference; asserted in the tests) whenever the controller allows it;
the state-based controller keeps the scalar path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import (
    EstimatorState,
    StateBasedEstimator,
    control_impulsive,
    control_optimal,
    control_state_based,
    control_zoh,
)
from .core import (
    BudgetState,
    CalibrationFailure,
    DelayPipeline,
    NoiseModel,
    SystemParams,
    ValidationError,
    run_streams,
)
from .lqr import riccati_steady
from .policies import (
    SwitchDecisionInput,
    ThresholdTable,
    build_periodic,
    decide_periodic,
    decide_state_based,
    decide_threshold,
)

DIVERGE_STATE = 1e8
DIVERGE_COST = 1e9


# --------------------------------------------------------------------------
# Policy / controller descriptors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    kind: str                     # bernoulli | periodic | threshold_const | threshold_table | state_based
    theta: float = 0.0            # constant threshold on S_m^2
    gamma: float = 0.0            # state-based threshold on |X|
    table: ThresholdTable | None = None

    def uses_randomness(self) -> bool:
        return self.kind == "bernoulli"


@dataclass(frozen=True)
class ControllerSpec:
    kind: str                     # optimal | zoh | impulsive | state_based


_POLICY_KINDS = ("bernoulli", "periodic", "threshold_const", "threshold_table", "state_based")
_CONTROLLER_KINDS = ("optimal", "zoh", "impulsive", "state_based")


def _policy_decide(spec: PolicySpec, inp: SwitchDecisionInput, p: SystemParams,
                   schedule_steps, draw: float) -> int:
    if spec.kind == "bernoulli":
        if not inp.budget.can_switch():
            return 0
        return int(draw < p.rate)
    if spec.kind == "periodic":
        return decide_periodic(inp.k, inp.budget, schedule_steps)
    if spec.kind == "threshold_const":
        return decide_threshold(inp, ThresholdTable(fallback_theta=spec.theta), "constant", p)
    if spec.kind == "threshold_table":
        return decide_threshold(inp, spec.table, "table", p)
    if spec.kind == "state_based":
        return decide_state_based(inp, spec.gamma)
    raise ValidationError(f"unknown policy kind {spec.kind!r}")


# --------------------------------------------------------------------------
# Loop state and the reference step
# --------------------------------------------------------------------------

@dataclass
class LoopState:
    x: float
    est: object
    pipe: DelayPipeline
    budget: BudgetState
    s_m: float = 0.0
    m: int = 0
    k: int = 0
    cost_acc: float = 0.0
    u_prev: float = 0.0
    update_received: bool = False
    stage_costs: list = field(default_factory=list)
    eps_series: list = field(default_factory=list)
    lxu_series: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    max_abs_x: float = 0.0


def new_loop_state(p: SystemParams, controller: ControllerSpec,
                   model: NoiseModel, gamma: float = 0.0) -> LoopState:
    if controller.kind == "state_based":
        est = StateBasedEstimator(p, model, gamma)
    else:
        est = EstimatorState(a=p.a, b=p.b, tau=p.tau)
    return LoopState(x=0.0, est=est, pipe=DelayPipeline(p.tau),
                     budget=BudgetState(q_remaining=p.budget), m=p.tau)


def step(ls: LoopState, policy: PolicySpec, controller: ControllerSpec,
         model: NoiseModel, p: SystemParams, rng: np.random.Generator,
         gain: float, schedule_steps=frozenset(), noise: float | None = None,
         policy_draw: float | None = None) -> LoopState:
    """Advance one stage; the caller may pre-draw the randomness."""
    k = ls.k
    if policy_draw is None:
        policy_draw = rng.random() if policy.uses_randomness() else 0.0
    inp = SwitchDecisionInput(k=k, x_k=ls.x, s_m=ls.s_m, m=ls.m, budget=ls.budget)
    d = _policy_decide(policy, inp, p, schedule_steps, policy_draw)
    ls.budget.consume(d)
    ls.decisions.append(d)

    d_out, x_out = ls.pipe.push(d, ls.x)
    ls.update_received = bool(d_out)
    if d_out:
        if controller.kind == "state_based":
            ls.est.reanchor(x_out, k - p.tau)
        else:
            ls.est.reanchor(x_out)
    elif controller.kind == "state_based":
        emitted = k - p.tau
        # slabs at emission times < 1 reflect the deterministic pre-history
        if emitted >= 1 and emitted > ls.est.anchor_time:
            ls.est.observe_silence(emitted - ls.est.anchor_time)

    if controller.kind == "optimal":
        u = control_optimal(ls.est, gain)
    elif controller.kind == "zoh":
        u = control_zoh(ls.est, gain, ls.update_received, ls.u_prev)
    elif controller.kind == "impulsive":
        u = control_impulsive(ls.est, p, ls.update_received)
    elif controller.kind == "state_based":
        u = control_state_based(ls.est, gain)
    else:
        raise ValidationError(f"unknown controller kind {controller.kind!r}")

    stage = p.q * ls.x * ls.x + p.r * u * u
    ls.stage_costs.append(stage)
    ls.cost_acc += stage
    ls.eps_series.append(ls.x - ls.est.x_hat)
    ls.lxu_series.append(gain * ls.x + u)

    w = model.sample(rng) if noise is None else noise
    ls.x = p.a * ls.x + p.b * u + w
    if ls.x > 1e15:
        ls.x = 1e15
    elif ls.x < -1e15:
        ls.x = -1e15
    ls.max_abs_x = max(ls.max_abs_x, abs(ls.x))
    if d:
        ls.s_m = 0.0
        ls.m = 0
    ls.s_m = p.a * ls.s_m + w
    ls.m += 1
    ls.u_prev = u
    ls.est.advance(u)
    if isinstance(ls.est, EstimatorState):
        ls.est.x_hat = min(max(ls.est.x_hat, -1e15), 1e15)
    ls.k += 1
    return ls


def detect_divergence(ls: LoopState) -> bool:
    steps = max(ls.k, 1)
    return ls.max_abs_x > DIVERGE_STATE or ls.cost_acc / steps > DIVERGE_COST


# --------------------------------------------------------------------------
# Single-run and batch execution
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    stage_costs: np.ndarray
    eps_sq: np.ndarray
    lxu_sq: np.ndarray
    decisions: np.ndarray
    terminal_x: float
    diverged: bool

    def p1_cost(self, p: SystemParams) -> float:
        return (self.stage_costs.sum() + p.q * self.terminal_x**2) / p.horizon


def run_single(p: SystemParams, model: NoiseModel, policy: PolicySpec,
               controller: ControllerSpec, seed: int, run_index: int,
               budget_on: bool = True) -> RunResult:
    noise_rng, policy_rng = run_streams(seed, run_index)
    noise_u = noise_rng.random(p.horizon)
    policy_u = policy_rng.random(p.horizon)
    w_seq = model.from_uniform(noise_u)
    schedule = build_periodic(p.horizon, p.rate).switch_steps(p.tau) \
        if policy.kind == "periodic" else frozenset()
    ls = new_loop_state(p, controller, model, policy.gamma)
    if not budget_on:
        ls.budget.q_remaining = p.horizon + 1
    gain = riccati_steady(p)[1]
    for k in range(p.horizon):
        step(ls, policy, controller, model, p, noise_rng, gain, schedule,
             noise=float(w_seq[k]), policy_draw=float(policy_u[k]))
    return RunResult(
        stage_costs=np.asarray(ls.stage_costs),
        eps_sq=np.square(np.asarray(ls.eps_series)),
        lxu_sq=np.square(np.asarray(ls.lxu_series)),
        decisions=np.asarray(ls.decisions),
        terminal_x=ls.x,
        diverged=detect_divergence(ls),
    )


def _alpha_matrix(table: ThresholdTable, p: SystemParams) -> np.ndarray:
    q0 = p.budget
    stages = p.effective_horizon
    mat = np.full((p.horizon, q0 + 1), np.inf)
    for (k, j), a in table.alpha.items():
        if k < p.horizon and 0 <= j <= q0:
            mat[k, j] = a
    mat[stages:, :] = np.inf
    return mat


def run_batch(p: SystemParams, model: NoiseModel, policy: PolicySpec,
              controller: ControllerSpec, runs: int, seed: int,
              budget_on: bool = True) -> dict[str, np.ndarray]:
    """Vectorized batch over runs; matches run_single stream-for-stream."""
    if controller.kind == "state_based":
        raise ValidationError("state-based controller has no vectorized path")
    n, tau, q0 = p.horizon, p.tau, p.budget
    stages = p.effective_horizon
    gain = riccati_steady(p)[1]
    w = np.empty((runs, n))
    pu = np.empty((runs, n))
    for i in range(runs):
        noise_rng, policy_rng = run_streams(seed, i)
        w[i] = model.from_uniform(noise_rng.random(n))
        pu[i] = policy_rng.random(n)

    schedule = build_periodic(n, p.rate).switch_steps(tau) \
        if policy.kind == "periodic" else frozenset()
    alpha_mat = _alpha_matrix(policy.table, p) if policy.kind == "threshold_table" else None

    x = np.zeros(runs)
    xhat = np.zeros(runs)
    s = np.zeros(runs)
    u_prev = np.zeros(runs)
    budget = np.full(runs, q0 if budget_on else n + 1)
    x_hist = np.zeros((runs, n + 1))
    d_hist = np.zeros((runs, n), dtype=bool)
    u_pad = np.zeros((runs, n + tau))
    stage_costs = np.zeros((runs, n))
    eps_sq = np.zeros((runs, n))
    lxu_sq = np.zeros((runs, n))
    max_abs = np.zeros(runs)

    for k in range(n):
        can = budget > 0
        if policy.kind == "bernoulli":
            d = (pu[:, k] < p.rate) & can
        elif policy.kind == "periodic":
            d = np.full(runs, k in schedule) & can
        elif policy.kind in ("threshold_const", "threshold_table"):
            if policy.kind == "threshold_const":
                theta = np.full(runs, policy.theta)
            else:
                theta = alpha_mat[k, np.minimum(budget, q0)] * p.sigma_w**2 \
                    if k < n else np.full(runs, np.inf)
            d = (s * s >= theta) & can
            if k <= stages - 1:
                d |= (budget >= stages - k) & can
            else:
                d &= np.isfinite(theta)
        elif policy.kind == "state_based":
            d = (np.abs(x) > policy.gamma) & can
        else:
            raise ValidationError(f"unknown policy kind {policy.kind!r}")
        d_hist[:, k] = d
        budget = budget - d

        if k >= tau:
            d_out = d_hist[:, k - tau]
            x_out = x_hist[:, k - tau]
        else:
            d_out = np.full(runs, k == 0)
            x_out = np.zeros(runs)
        if d_out.any():
            anchor = p.a**tau * x_out
            for j in range(tau):
                anchor = anchor + p.a ** (tau - 1 - j) * p.b * u_pad[:, k + j]
            xhat = np.where(d_out, anchor, xhat)

        if controller.kind == "optimal":
            u = -gain * xhat
        elif controller.kind == "zoh":
            u = np.where(d_out, -gain * xhat, u_prev)
        elif controller.kind == "impulsive":
            u = np.where(d_out, -(p.a / p.b) * xhat, 0.0)
        else:
            raise ValidationError(f"unknown controller kind {controller.kind!r}")
        u_pad[:, k + tau] = u

        stage_costs[:, k] = p.q * x * x + p.r * u * u
        eps_sq[:, k] = np.square(x - xhat)
        lxu_sq[:, k] = np.square(gain * x + u)

        x = np.clip(p.a * x + p.b * u + w[:, k], -1e15, 1e15)
        x_hist[:, k + 1] = x
        max_abs = np.maximum(max_abs, np.abs(x))
        s = np.where(d, 0.0, s)
        s = p.a * s + w[:, k]
        xhat = np.clip(p.a * xhat + p.b * u, -1e15, 1e15)
        u_prev = u

    diverged = (max_abs > DIVERGE_STATE) | (stage_costs.mean(axis=1) > DIVERGE_COST)
    return {
        "stage_costs": stage_costs,
        "eps_sq": eps_sq,
        "lxu_sq": lxu_sq,
        "decisions": d_hist,
        "terminal_x": x,
        "diverged": diverged,
    }


# --------------------------------------------------------------------------
# Aggregated statistics
# --------------------------------------------------------------------------

@dataclass
class RunStats:
    """Across-run aggregates; diverged runs report infinite steady cost."""

    runs: int
    steps: int
    stage_costs: np.ndarray           # mean stage cost per step, stable runs
    running_avg: np.ndarray           # mean running-average stage cost per step
    running_ci: np.ndarray
    steady_cost: float                # mean over final-window stage costs, stable runs
    steady_ci: float
    switch_rate: float
    diverged_fraction: float
    steady_per_run: np.ndarray        # +inf where diverged
    p1_mean: float = float("nan")
    p1_ci: float = float("nan")


def _ci95(sample: np.ndarray) -> float:
    n = len(sample)
    if n <= 1:
        return 0.0
    return 1.96 * float(np.std(sample, ddof=1)) / math.sqrt(n)


def aggregate(batch: dict[str, np.ndarray], p: SystemParams,
              steady_window: int = 20) -> RunStats:
    costs = batch["stage_costs"]
    runs, n = costs.shape
    diverged = batch["diverged"]
    ok = ~diverged
    run_avg = np.cumsum(costs, axis=1) / np.arange(1, n + 1)
    use = run_avg[ok] if ok.any() else run_avg
    running_avg = use.mean(axis=0)
    if len(use) > 1:
        running_ci = 1.96 * use.std(axis=0, ddof=1) / math.sqrt(len(use))
    else:
        running_ci = np.zeros(n)
    steady_run = costs[:, n - steady_window:].mean(axis=1)
    steady_per_run = np.where(diverged, np.inf, steady_run)
    stable = steady_run[ok]
    steady = float(stable.mean()) if len(stable) else float("inf")
    p1 = costs.sum(axis=1) / p.horizon + p.q * batch["terminal_x"] ** 2 / p.horizon
    return RunStats(
        runs=runs,
        steps=n,
        stage_costs=(costs[ok] if ok.any() else costs).mean(axis=0),
        running_avg=running_avg,
        running_ci=running_ci,
        steady_cost=steady,
        steady_ci=_ci95(stable) if len(stable) else float("inf"),
        switch_rate=float(batch["decisions"].mean()),
        diverged_fraction=float(diverged.mean()),
        steady_per_run=steady_per_run,
        p1_mean=float(p1[ok].mean()) if ok.any() else float("inf"),
        p1_ci=_ci95(p1[ok]) if ok.sum() > 1 else 0.0,
    )


def run_mc(p: SystemParams, model: NoiseModel, policy: PolicySpec,
           controller: ControllerSpec, runs: int, seed: int,
           steady_window: int = 20) -> RunStats:
    """Monte Carlo aggregate with per-run sub-seeds seed XOR i."""
    if runs < 1:
        raise ValidationError("need at least one run")
    if controller.kind == "state_based" and policy.kind != "state_based":
        raise ValidationError("state-based controller pairs with state-based switching")
    if controller.kind != "state_based":
        batch = run_batch(p, model, policy, controller, runs, seed)
    else:
        results = [run_single(p, model, policy, controller, seed, i) for i in range(runs)]
        batch = {
            "stage_costs": np.stack([r.stage_costs for r in results]),
            "eps_sq": np.stack([r.eps_sq for r in results]),
            "lxu_sq": np.stack([r.lxu_sq for r in results]),
            "decisions": np.stack([r.decisions for r in results]),
            "terminal_x": np.array([r.terminal_x for r in results]),
            "diverged": np.array([r.diverged for r in results]),
        }
    return aggregate(batch, p, steady_window)


# --------------------------------------------------------------------------
# Rate calibration
# --------------------------------------------------------------------------

_PILOT_CHAINS = 100
_PILOT_STEPS = 100
_CALIBRATION_SEED = 987654321


def _pilot_rate_threshold(theta: float, p: SystemParams, model: NoiseModel) -> float:
    """Empirical switching rate of the autonomous threshold renewal process."""
    rng = np.random.default_rng(_CALIBRATION_SEED)
    w = model.from_uniform(rng.random((_PILOT_CHAINS, _PILOT_STEPS)))
    s = np.zeros(_PILOT_CHAINS)
    fires = 0
    for k in range(_PILOT_STEPS):
        d = s * s >= theta
        fires += int(d.sum())
        s = np.where(d, 0.0, s)
        s = p.a * s + w[:, k]
    return fires / (_PILOT_CHAINS * _PILOT_STEPS)


def _pilot_rate_state(gamma: float, p: SystemParams, model: NoiseModel) -> float:
    """Closed-loop pilot for the state-based rule, budget disabled."""
    spec = PolicySpec(kind="state_based", gamma=gamma)
    pilot_p = SystemParams(a=p.a, b=p.b, q=p.q, r=p.r, sigma_w=p.sigma_w,
                           tau=p.tau, rate=1.0, horizon=_PILOT_STEPS)
    batch = run_batch(pilot_p, model, spec, ControllerSpec("optimal"),
                      _PILOT_CHAINS, _CALIBRATION_SEED, budget_on=False)
    return float(batch["decisions"].mean())


def calibrate_rate(policy_family: str, p: SystemParams, model: NoiseModel,
                   target: float, tol: float = 0.01) -> float:
    """Bisection on the scalar policy parameter to match the target rate.

    The pilot is a fixed-seed 10^4-step simulation (100 chains of 100
    steps): the autonomous switch process for the threshold family, a
    budget-free closed loop for the state-based family.
    """
    if not (0.0 < target <= 1.0):
        raise ValidationError("target rate must lie in (0, 1]")
    if policy_family == "threshold":
        pilot = lambda v: _pilot_rate_threshold(v, p, model)
    elif policy_family == "state_based":
        pilot = lambda v: _pilot_rate_state(v, p, model)
    else:
        raise ValidationError(f"unknown policy family {policy_family!r}")

    lo, rate_lo = 0.0, pilot(0.0)
    if abs(rate_lo - target) <= tol:
        return lo
    hi = max(p.sigma_w**2, 1.0) if policy_family == "threshold" else max(p.sigma_w, 1.0)
    rate_hi = pilot(hi)
    expansions = 0
    while rate_hi > target and expansions < 60:
        hi *= 2.0
        rate_hi = pilot(hi)
        expansions += 1
    if abs(rate_hi - rate_lo) < 1e-12:
        raise CalibrationFailure("empirical rate does not respond to the parameter")
    if rate_hi > target:
        raise CalibrationFailure("could not drive the pilot rate below target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rate_mid = pilot(mid)
        if abs(rate_mid - target) <= tol:
            return mid
        if rate_mid > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationFailure(f"bisection stalled; last interval [{lo}, {hi}]")


# --------------------------------------------------------------------------
# Symmetry diagnostic
# --------------------------------------------------------------------------

def symmetry_statistic(policy: PolicySpec, p: SystemParams, model: NoiseModel,
                       runs: int, seed: int, m_values=(1, 2, 3)) -> dict[int, tuple[float, float, int]]:
    """Orientation-weighted conditional mean of S_m over silence histories.

    Collects sign(x_hat) * S_m at every step whose last m decisions since
    the anchor were silent; symmetric policies give zero mean, the
    state-based rule does not.  Runs on the vectorized loop with the
    optimal controller (the statistic reads the switch process, not the
    control law).
    """
    n, tau = p.horizon, p.tau
    gain = riccati_steady(p)[1]
    w = np.empty((runs, n))
    pu = np.empty((runs, n))
    for i in range(runs):
        noise_rng, policy_rng = run_streams(seed, i)
        w[i] = model.from_uniform(noise_rng.random(n))
        pu[i] = policy_rng.random(n)
    schedule = build_periodic(n, p.rate).switch_steps(tau) \
        if policy.kind == "periodic" else frozenset()

    x = np.zeros(runs)
    xhat = np.zeros(runs)
    s = np.zeros(runs)
    m = np.full(runs, tau)
    budget = np.full(runs, p.budget)
    x_hist = np.zeros((runs, n + 1))
    d_hist = np.zeros((runs, n), dtype=bool)
    u_pad = np.zeros((runs, n + tau))
    sums = {mv: [0.0, 0.0, 0] for mv in m_values}

    for k in range(n):
        for mv in m_values:
            mask = (m == mv) & (xhat != 0.0)
            if mask.any():
                vals = np.sign(xhat[mask]) * s[mask]
                sums[mv][0] += float(vals.sum())
                sums[mv][1] += float((vals**2).sum())
                sums[mv][2] += int(mask.sum())
        can = budget > 0
        if policy.kind == "bernoulli":
            d = (pu[:, k] < p.rate) & can
        elif policy.kind == "periodic":
            d = np.full(runs, k in schedule) & can
        elif policy.kind == "threshold_const":
            d = (s * s >= policy.theta) & can
        elif policy.kind == "state_based":
            d = (np.abs(x) > policy.gamma) & can
        else:
            raise ValidationError(f"policy kind {policy.kind!r} not supported here")
        d_hist[:, k] = d
        budget = budget - d
        if k >= tau:
            d_out = d_hist[:, k - tau]
            x_out = x_hist[:, k - tau]
        else:
            d_out = np.full(runs, k == 0)
            x_out = np.zeros(runs)
        if d_out.any():
            anchor = p.a**tau * x_out
            for j in range(tau):
                anchor = anchor + p.a ** (tau - 1 - j) * p.b * u_pad[:, k + j]
            xhat = np.where(d_out, anchor, xhat)
        u = -gain * xhat
        u_pad[:, k + tau] = u
        x = p.a * x + p.b * u + w[:, k]
        x_hist[:, k + 1] = x
        s = np.where(d, 0.0, s)
        s = p.a * s + w[:, k]
        m = np.where(d, 0, m) + 1
        xhat = p.a * xhat + p.b * u

    out = {}
    for mv, (tot, tot_sq, count) in sums.items():
        if count < 2:
            out[mv] = (0.0, float("inf"), count)
            continue
        mean = tot / count
        var = max(tot_sq / count - mean**2, 0.0)
        out[mv] = (mean, math.sqrt(var / count), count)
    return out
