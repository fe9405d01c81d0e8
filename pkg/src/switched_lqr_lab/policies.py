"""Switching policies: Bernoulli, periodic, symmetric threshold, state-based.

Bernoulli and periodic decisions are functions of (step, budget, randomness)
only -- their signatures do not even accept the plant state or accumulated
disturbance, which is what makes them symmetric by construction.  The
threshold policy reads the accumulated disturbance S_m, the state-based
policy reads the raw plant state.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BudgetState,
    MissingTableEntry,
    SystemParams,
    ValidationError,
    budget_cap,
)


@dataclass
class SwitchDecisionInput:
    """Sufficient statistic of the switch-side information actually used.

    S_m is recomputable from the disturbance history via S <- a*S + W with a
    reset to zero at each switch.
    """

    k: int
    x_k: float
    s_m: float
    m: int
    budget: BudgetState
    rng: np.random.Generator | None = None


# --------------------------------------------------------------------------
# Bernoulli
# --------------------------------------------------------------------------

def decide_bernoulli(k: int, budget: BudgetState, rng: np.random.Generator, r_s: float) -> int:
    """Switch with probability r_s while budget remains."""
    del k
    if not budget.can_switch():
        return 0
    return int(rng.random() < r_s)


# --------------------------------------------------------------------------
# Periodic
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicSchedule:
    """Inter-switching times that are as periodic as possible."""

    horizon: int
    deltas: tuple[int, ...]

    def switch_steps(self, tau: int) -> frozenset[int]:
        """In-horizon switch instants for a loop anchored at step -tau."""
        steps = []
        t = -tau
        for d in self.deltas:
            t += d
            if 0 <= t < self.horizon:
                steps.append(t)
        return frozenset(steps)


def build_periodic(horizon: int, r_s: float) -> PeriodicSchedule:
    """Q_0 = floor(N r_s) intervals from {floor(N/Q_0), floor(N/Q_0)+1} summing to N.

    The long intervals are spread as evenly as possible (Bresenham-style
    accumulator), which also fixes the schedule deterministically.
    """
    if not (0.0 < r_s <= 1.0):
        raise ValidationError("switching rate must lie in (0, 1]")
    q0 = budget_cap(horizon, r_s)
    if q0 == 0:
        return PeriodicSchedule(horizon, ())
    base = horizon // q0
    n_long = horizon - q0 * base
    deltas = []
    acc = 0
    for _ in range(q0):
        acc += n_long
        if acc >= q0:
            acc -= q0
            deltas.append(base + 1)
        else:
            deltas.append(base)
    assert sum(deltas) == horizon
    return PeriodicSchedule(horizon, tuple(deltas))


def decide_periodic(k: int, budget: BudgetState, schedule_steps: frozenset[int]) -> int:
    if not budget.can_switch():
        return 0
    return int(k in schedule_steps)


# --------------------------------------------------------------------------
# Symmetric threshold
# --------------------------------------------------------------------------

@dataclass
class ThresholdTable:
    """Thresholds alpha_{kj} on S_m^2 / sigma_w^2, plus a constant fallback.

    ``alpha`` maps (step, remaining budget) to the stage threshold; the
    rate-calibrated constant variant stores the threshold on S_m^2 directly
    in ``fallback_theta``.
    """

    alpha: dict[tuple[int, int], float] = field(default_factory=dict)
    fallback_theta: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "j", "alpha"])
        for (k, j) in sorted(self.alpha):
            writer.writerow([k, j, repr(self.alpha[(k, j)])])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, fallback_theta: float = 0.0) -> "ThresholdTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["k", "j", "alpha"]:
            raise ValidationError("threshold CSV must start with header k,j,alpha")
        alpha = {(int(k), int(j)): float(a) for k, j, a in rows[1:]}
        return ThresholdTable(alpha=alpha, fallback_theta=fallback_theta)


def decide_threshold(inp: SwitchDecisionInput, table: ThresholdTable, mode: str,
                     p: SystemParams) -> int:
    """Fire when S_m^2 reaches the stage threshold (>= convention).

    Zero budget forces silence.  A budget covering every remaining effective
    step forces a switch, mirroring the always-switch boundary of the budget
    lattice.  Steps past the effective horizon cannot reach the controller,
    so they never fire in table mode.
    """
    if not inp.budget.can_switch():
        return 0
    k_eff = p.effective_horizon  # decisions at k >= N - tau have no effect
    if inp.k <= k_eff - 1 and inp.budget.q_remaining >= k_eff - inp.k:
        return 1
    if mode == "constant":
        theta = table.fallback_theta
    elif mode == "table":
        if inp.k >= k_eff:
            return 0
        key = (inp.k, inp.budget.q_remaining)
        if key not in table.alpha:
            raise MissingTableEntry(f"no threshold for step {inp.k}, budget {inp.budget.q_remaining}")
        theta = table.alpha[key] * p.sigma_w**2
    else:
        raise ValidationError(f"unknown threshold mode {mode!r}")
    if math.isinf(theta):
        return 0
    return int(inp.s_m * inp.s_m >= theta)


# --------------------------------------------------------------------------
# State-based (non-symmetric benchmark)
# --------------------------------------------------------------------------

def decide_state_based(inp: SwitchDecisionInput, gamma: float) -> int:
    """Fire on |X_k| > gamma (strict), silence once the budget is gone."""
    if gamma < 0:
        raise ValidationError("gamma must be nonnegative")
    if not inp.budget.can_switch():
        return 0
    return int(abs(inp.x_k) > gamma)
