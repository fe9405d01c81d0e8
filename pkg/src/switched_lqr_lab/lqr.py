"""Riccati recursions, steady-state gain, and the cost reformulation.

Everything here is a pure function of the scalar parameters; the closed-loop
machinery lives in ``engine``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NonConvergenceError, SystemParams


@dataclass(frozen=True)
class RiccatiSolution:
    """Cost-to-go weights P_k and feedback gains L_k, plus their fixed point."""

    p_seq: np.ndarray        # P_k for k = 0..N, backward from P_N = q
    gain_seq: np.ndarray     # L_k for k = 0..N-1, L_k = a b P_{k+1} / (r + b^2 P_{k+1})
    p_ss: float
    gain_ss: float


def _riccati_map(p_val: float, a: float, b: float, q: float, r: float) -> float:
    return q + a * a * p_val - (a * b * p_val) ** 2 / (r + b * b * p_val)


def riccati_finite(p: SystemParams) -> RiccatiSolution:
    """Backward recursion from P_N = q over the full horizon."""
    n = p.horizon
    ps = np.empty(n + 1)
    gains = np.empty(n)
    ps[n] = p.q
    for k in range(n - 1, -1, -1):
        nxt = ps[k + 1]
        gains[k] = p.a * p.b * nxt / (p.r + p.b * p.b * nxt)
        ps[k] = _riccati_map(nxt, p.a, p.b, p.q, p.r)
    p_ss, gain_ss = riccati_steady(p)
    return RiccatiSolution(p_seq=ps, gain_seq=gains, p_ss=p_ss, gain_ss=gain_ss)


def riccati_steady(p: SystemParams, tol: float = 1e-12, max_iter: int = 100_000) -> tuple[float, float]:
    """Fixed point of the scalar Riccati map, with the matching gain.

    The map contracts geometrically for q, r > 0, so the cap is a safety net.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    val = p.q
    for _ in range(max_iter):
        nxt = _riccati_map(val, p.a, p.b, p.q, p.r)
        if abs(nxt - val) < tol:
            gain = p.a * p.b * nxt / (p.r + p.b * p.b * nxt)
            return nxt, gain
        val = nxt
    raise NonConvergenceError(f"Riccati iteration stalled at P={val!r}")


def steady_quadratic_residual(p: SystemParams, p_val: float) -> float:
    """Residual of b^2 P^2 + (r - r a^2 - q b^2) P - q r = 0 (steady-state oracle)."""
    b2 = p.b * p.b
    return b2 * p_val**2 + (p.r - p.r * p.a**2 - p.q * b2) * p_val - p.q * p.r


def equivalent_cost(p: SystemParams, err_sq_mean: float, x0_sq_mean: float = 0.0) -> float:
    """Reconstruct the time-averaged quadratic cost from the estimation error.

    With the steady-state feedback law U = -L x_hat the per-stage control
    mismatch is (L X + U)^2 = L^2 (X - x_hat)^2, so the cost decomposes as

        P/N * E[X_0^2]  +  L^2 (r + b^2 P) * mean E[eps^2]  +  P sigma_w^2.

    ``err_sq_mean`` is the horizon average of E[eps_k^2].
    """
    p_ss, gain = riccati_steady(p)
    weight = gain * gain * (p.r + p.b * p.b * p_ss)
    return p_ss / p.horizon * x0_sq_mean + weight * err_sq_mean + p_ss * p.sigma_w**2


def equivalent_cost_general(p: SystemParams, lxu_sq_mean: float, x0_sq_mean: float = 0.0) -> float:
    """Same reconstruction for an arbitrary controller.

    ``lxu_sq_mean`` is the horizon average of E[(L X_k + U_k)^2]; for the
    optimal controller it equals L^2 * err_sq_mean and the two forms agree.
    """
    p_ss, _ = riccati_steady(p)
    weight = p.r + p.b * p.b * p_ss
    return p_ss / p.horizon * x0_sq_mean + weight * lxu_sq_mean + p_ss * p.sigma_w**2


def error_cost_weight(p: SystemParams) -> float:
    """Coefficient multiplying the mean squared estimation error."""
    p_ss, gain = riccati_steady(p)
    return gain * gain * (p.r + p.b * p.b * p_ss)


def closed_loop_pole(p: SystemParams) -> float:
    """a - b L at the steady-state gain; the estimator coasts at this rate."""
    p_ss, gain = riccati_steady(p)
    del p_ss
    return p.a - p.b * gain
