import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switched_lqr_lab.core import SystemParams
from switched_lqr_lab.lqr import (
    equivalent_cost,
    equivalent_cost_general,
    error_cost_weight,
    riccati_finite,
    riccati_steady,
    steady_quadratic_residual,
)

PHI = (1 + math.sqrt(5)) / 2


def quadratic_root(p):
    # hand-derived steady-state oracle: b^2 P^2 + (r - r a^2 - q b^2) P - q r = 0
    b2 = p.b * p.b
    coeff = p.r - p.r * p.a**2 - p.q * b2
    disc = coeff * coeff + 4 * b2 * p.q * p.r
    return (-coeff + math.sqrt(disc)) / (2 * b2)


class TestRiccati:
    def test_one_backward_step_by_hand(self):
        sol = riccati_finite(SystemParams(horizon=10, sigma_w=1.0))
        assert sol.p_seq[10] == 1.0
        assert sol.p_seq[9] == pytest.approx(1.5)  # 1 + 1 - 1/2

    def test_golden_ratio_fixed_point(self):
        p = SystemParams()
        P, L = riccati_steady(p)
        assert P == pytest.approx(PHI, abs=1e-9)
        assert L == pytest.approx(1 / PHI, abs=1e-9)
        assert abs(steady_quadratic_residual(p, P)) < 1e-9

    def test_half_gain_plant(self):
        p = SystemParams(a=0.5)
        P, _ = riccati_steady(p)
        assert P == pytest.approx(quadratic_root(p), abs=1e-10)

    def test_memoryless_plant(self):
        p = SystemParams(a=1e-14)
        P, L = riccati_steady(p)
        assert P == pytest.approx(p.q)
        assert abs(L) < 1e-12

    def test_finite_matches_steady_for_long_horizons(self):
        p = SystemParams(horizon=300)
        sol = riccati_finite(p)
        assert sol.p_seq[0] == pytest.approx(sol.p_ss, abs=1e-10)
        assert np.all(np.diff(sol.p_seq) <= 1e-12)  # monotone backward

    @given(st.floats(0.1, 1.6), st.floats(0.2, 2.0), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
    @settings(max_examples=60, deadline=None)
    def test_quadratic_oracle_residual(self, a, b, q, r):
        p = SystemParams(a=a, b=b, q=q, r=r)
        P, _ = riccati_steady(p)
        assert abs(steady_quadratic_residual(p, P)) < 1e-8
        assert P == pytest.approx(quadratic_root(p), rel=1e-9)


class TestEquivalentCost:
    def test_noise_floor_only(self):
        p = SystemParams()
        P, _ = riccati_steady(p)
        assert equivalent_cost(p, 0.0, 0.0) == pytest.approx(P * 100.0)

    def test_error_weight_at_defaults(self):
        # L^2 (r + b^2 P) with P = phi collapses to exactly 1
        assert error_cost_weight(SystemParams()) == pytest.approx(1.0, abs=1e-9)

    def test_general_form_matches_optimal_form(self):
        p = SystemParams()
        _, L = riccati_steady(p)
        err = 37.5
        assert equivalent_cost(p, err) == pytest.approx(
            equivalent_cost_general(p, L * L * err))

    def test_zero_everything(self):
        p = SystemParams(sigma_w=1e-12)
        assert equivalent_cost(p, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_vanishing_input_gain_limit():
    # b -> 0 limit on a stable plant: the feedback gain collapses even
    # though b = 0 itself is rejected as a degenerate plant
    sol = riccati_finite(SystemParams(a=0.9, b=1e-9, horizon=20))
    assert np.abs(sol.gain_seq).max() < 1e-6
    assert sol.p_ss == pytest.approx(1.0 / (1.0 - 0.81), rel=1e-6)
