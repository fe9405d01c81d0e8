import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switched_lqr_lab.core import BudgetState, SystemParams, budget_cap
from switched_lqr_lab.policies import (
    SwitchDecisionInput,
    ThresholdTable,
    build_periodic,
    decide_bernoulli,
    decide_periodic,
    decide_state_based,
    decide_threshold,
)


def make_input(k=0, x=0.0, s=0.0, m=1, budget=5):
    return SwitchDecisionInput(k=k, x_k=x, s_m=s, m=m, budget=BudgetState(budget))


class TestBernoulli:
    def test_rate_one_always_fires(self):
        rng = np.random.default_rng(0)
        assert all(decide_bernoulli(k, BudgetState(5), rng, 1.0) for k in range(20))

    def test_empirical_rate(self):
        rng = np.random.default_rng(1)
        hits = sum(decide_bernoulli(0, BudgetState(10), rng, 0.4) for _ in range(1_000_000))
        assert abs(hits / 1e6 - 0.4) < 0.002

    def test_budget_exhausted(self):
        rng = np.random.default_rng(2)
        assert decide_bernoulli(0, BudgetState(0), rng, 1.0) == 0


class TestPeriodic:
    def test_exact_halving(self):
        assert list(build_periodic(10, 0.5).deltas) == [2, 2, 2, 2, 2]

    def test_two_long_intervals(self):
        deltas = build_periodic(10, 0.4).deltas
        assert sorted(deltas) == [2, 2, 3, 3]
        assert sum(deltas) == 10

    def test_rate_one(self):
        assert set(build_periodic(12, 1.0).deltas) == {1}

    @given(st.integers(10, 200), st.integers(1, 10))
    @settings(max_examples=120, deadline=None)
    def test_as_periodic_as_possible(self, n, tenth):
        r_s = tenth / 10
        sched = build_periodic(n, r_s)
        q0 = budget_cap(n, r_s)
        assert len(sched.deltas) == q0
        assert sum(sched.deltas) == n
        assert max(sched.deltas) - min(sched.deltas) <= 1
        # unique feasible long-interval count for the base length
        base = n // q0
        assert sum(1 for d in sched.deltas if d == base + 1) == n - q0 * base

    def test_long_intervals_spread_evenly(self):
        deltas = build_periodic(10, 0.4).deltas
        longs = [i for i, d in enumerate(deltas) if d == 3]
        assert longs == [1, 3]  # alternating, not clumped

    def test_switch_steps_respect_anchor(self):
        sched = build_periodic(10, 0.5)
        steps = sched.switch_steps(tau=1)
        assert steps == frozenset({1, 3, 5, 7, 9})

    def test_periodic_decide_budget(self):
        assert decide_periodic(3, BudgetState(0), frozenset({3})) == 0
        assert decide_periodic(3, BudgetState(1), frozenset({3})) == 1


class TestThreshold:
    P = SystemParams(sigma_w=1.0, horizon=20, rate=0.5)

    def test_zero_error_never_fires_on_positive_threshold(self):
        t = ThresholdTable(fallback_theta=0.5)
        assert decide_threshold(make_input(s=0.0), t, "constant", self.P) == 0

    @given(st.floats(-20, 20), st.floats(0.01, 9.0))
    @settings(max_examples=100, deadline=None)
    def test_decision_even_in_s(self, s, theta):
        t = ThresholdTable(fallback_theta=theta)
        d_pos = decide_threshold(make_input(s=s), t, "constant", self.P)
        d_neg = decide_threshold(make_input(s=-s), t, "constant", self.P)
        assert d_pos == d_neg

    def test_degenerate_threshold_fires_at_zero(self):
        t = ThresholdTable(fallback_theta=0.0)
        assert decide_threshold(make_input(s=0.0), t, "constant", self.P) == 1

    def test_budget_exhaustion_overrides(self):
        t = ThresholdTable(fallback_theta=0.0)
        assert decide_threshold(make_input(s=9.0, budget=0), t, "constant", self.P) == 0

    def test_surplus_budget_forces_fire(self):
        # at k with budget >= remaining effective steps the switch must fire
        t = ThresholdTable(fallback_theta=1e9)
        inp = make_input(k=15, s=0.0, budget=6)  # effective horizon 19, remaining 4
        assert decide_threshold(inp, t, "constant", self.P) == 1

    def test_table_mode_lookup_and_missing(self):
        t = ThresholdTable(alpha={(0, 2): 4.0})
        assert decide_threshold(make_input(k=0, s=1.9, budget=2), t, "table", self.P) == 0
        assert decide_threshold(make_input(k=0, s=2.1, budget=2), t, "table", self.P) == 1
        from switched_lqr_lab.core import MissingTableEntry
        with pytest.raises(MissingTableEntry):
            decide_threshold(make_input(k=1, s=0.0, budget=2), t, "table", self.P)

    def test_csv_round_trip(self):
        t = ThresholdTable(alpha={(0, 1): 1.25, (1, 1): 0.0, (2, 1): math.inf})
        again = ThresholdTable.from_csv(t.to_csv())
        assert again.alpha == t.alpha


class TestStateBased:
    def test_strict_inequality_at_gamma(self):
        assert decide_state_based(make_input(x=10.0), 10.0) == 0

    def test_zero_gamma_fires_on_any_motion(self):
        assert decide_state_based(make_input(x=0.3), 0.0) == 1
        assert decide_state_based(make_input(x=0.0), 0.0) == 0

    def test_inside_band(self):
        assert decide_state_based(make_input(x=5.0), 10.0) == 0

    def test_budget_guard(self):
        assert decide_state_based(make_input(x=99.0, budget=0), 1.0) == 0


class TestStructuralSymmetry:
    def test_bernoulli_and_periodic_cannot_read_state(self):
        # symmetric by construction: the plant state and the accumulated
        # disturbance are not even parameters of these deciders
        for fn in (decide_bernoulli, decide_periodic):
            names = set(inspect.signature(fn).parameters)
            assert "x_k" not in names and "s_m" not in names and "inp" not in names
