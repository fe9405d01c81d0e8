"""Control laws: optimal symmetric, ZOH, impulsive, and state-based.

The first three share the symmetric-policy estimator: between updates the
conditional mean propagates through the known plant dynamics, and each
delayed sample re-anchors it exactly.  The state-based policy leaks
information through silence, so its estimator additionally tracks the
conditional law of the accumulated disturbance given the slab events the
controller has actually observed (delay honored), via an exact
one-dimensional gated-density recursion.  ``conditional_truncated_mean``
evaluates the per-noise conditional means of those events directly
(tensor-grid quadrature for few events, rejection sampling beyond) and
cross-checks the recursion.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import EmptyEventError, LabError, NoiseModel, SystemParams
from .dp import TruncatedSmDensity, _NoiseKernel

_EVENT_FLOOR = 1e-12


# --------------------------------------------------------------------------
# Symmetric-policy estimator
# --------------------------------------------------------------------------

@dataclass
class EstimatorState:
    """Conditional mean of the plant state under symmetric switching.

    ``pending_inputs`` holds the last tau applied inputs so a delayed sample
    X_{k-tau} can be propagated forward exactly:
    x_hat = a^tau X_{k-tau} + sum_j a^{tau-1-j} b U_{k-tau+j}.
    """

    a: float
    b: float
    tau: int
    x_hat: float = 0.0
    m: int = 0
    pending_inputs: deque = field(default_factory=deque)

    def __post_init__(self):
        if not self.pending_inputs:
            self.pending_inputs = deque([0.0] * self.tau, maxlen=self.tau)
        self.m = self.tau

    def reanchor(self, x_sample: float) -> None:
        val = self.a**self.tau * x_sample
        for j, u in enumerate(self.pending_inputs):
            val += self.a ** (self.tau - 1 - j) * self.b * u
        self.x_hat = val
        self.m = self.tau

    def advance(self, u: float) -> None:
        self.x_hat = self.a * self.x_hat + self.b * u
        self.pending_inputs.append(u)
        self.m += 1


def control_optimal(est, gain: float) -> float:
    """Linear feedback on the conditional mean."""
    return -gain * est.x_hat


def control_zoh(est, gain: float, update_received: bool, u_prev: float) -> float:
    """Feedback at update instants, held constant in between."""
    if update_received:
        return -gain * est.x_hat
    return u_prev


def control_impulsive(est, p: SystemParams, update_received: bool) -> float:
    """Deadbeat action at update instants, silence in between."""
    if update_received:
        return -(p.a / p.b) * est.x_hat
    return 0.0


# --------------------------------------------------------------------------
# Truncated conditional means
# --------------------------------------------------------------------------

def slab_events(a: float, xis, gamma: float) -> list[tuple[float, np.ndarray, float]]:
    """Standard event list: |xi_j + sum_{i<j} a^{j-1-i} W_i| <= gamma for each j."""
    events = []
    for j, xi in enumerate(xis, start=1):
        coeffs = np.array([a ** (j - 1 - i) for i in range(j)], dtype=float)
        events.append((float(xi), coeffs, float(gamma)))
    return events


def conditional_truncated_mean(model: NoiseModel, events, m: int,
                               rng: np.random.Generator | None = None,
                               mc_accepted: int = 100_000,
                               quad_points: int = 129) -> np.ndarray:
    """E[W_i | all slab events] for i = 0..m-1.

    Each event is ``(xi, coeffs, gamma)`` restricting |xi + coeffs . W| to
    at most gamma, where ``coeffs`` weights the first ``len(coeffs)`` noise
    variables.  Dimensions up to three use a tensor-grid quadrature clipped
    at eight standard deviations; beyond that, rejection sampling until
    ``mc_accepted`` draws survive.
    """
    if m < 1:
        raise LabError("need at least one noise variable")
    if not events:
        return np.zeros(m)
    if m <= 3:
        return _quadrature_means(model, events, m, quad_points)
    if rng is None:
        rng = np.random.default_rng(0)
    return _rejection_means(model, events, m, rng, mc_accepted)


def _quadrature_means(model: NoiseModel, events, m: int, points: int) -> np.ndarray:
    if m == 1:
        return _interval_mean(model, events)
    # midpoint tensor rule; each base cell is subdivided so slab boundaries
    # are resolved well below the cell scale
    refine = 5 if m == 2 else 2
    lim = 8.0 * model.sigma
    n = points * refine
    step = 2.0 * lim / n
    axis = -lim + step * (np.arange(n) + 0.5)
    pdf = model.pdf(axis)
    pdf = pdf / pdf.sum()
    grids = np.meshgrid(*([axis] * m), indexing="ij")
    weight = np.ones_like(grids[0])
    for i in range(m):
        shape = [1] * m
        shape[i] = n
        weight = weight * pdf.reshape(shape)
    mask = np.ones_like(weight, dtype=bool)
    for xi, coeffs, gamma in events:
        lin = xi
        for i, c in enumerate(coeffs):
            lin = lin + c * grids[i]
        mask &= np.abs(lin) <= gamma
    prob = float(weight[mask].sum())
    if prob < _EVENT_FLOOR:
        raise EmptyEventError(f"conditioning event probability {prob:.3e}")
    return np.array([float((grids[i] * weight)[mask].sum()) / prob for i in range(m)])


def _interval_mean(model: NoiseModel, events) -> np.ndarray:
    """Exact one-dimensional case: the events intersect to an interval."""
    lo, hi = -math.inf, math.inf
    for xi, coeffs, gamma in events:
        c = float(coeffs[0])
        if c == 0.0:
            if abs(xi) > gamma:
                raise EmptyEventError("inconsistent degenerate slab")
            continue
        a_, b_ = (-gamma - xi) / c, (gamma - xi) / c
        lo, hi = max(lo, min(a_, b_)), min(hi, max(a_, b_))
    lim = 40.0 * model.sigma
    lo, hi = max(lo, -lim), min(hi, lim)
    if hi <= lo:
        raise EmptyEventError("empty slab intersection")
    from scipy.integrate import quad
    prob = float(model.cdf(hi) - model.cdf(lo))
    if prob < _EVENT_FLOOR:
        raise EmptyEventError(f"conditioning event probability {prob:.3e}")
    num = quad(lambda w: w * float(model.pdf(w)), lo, hi, limit=200)[0]
    return np.array([num / prob])


def _rejection_means(model: NoiseModel, events, m: int,
                     rng: np.random.Generator, target: int) -> np.ndarray:
    accepted = np.zeros(m)
    count = 0
    drawn = 0
    batch = 1 << 15
    max_draws = 50_000_000
    while count < target and drawn < max_draws:
        w = model.from_uniform(rng.random((batch, m)))
        keep = np.ones(batch, dtype=bool)
        for xi, coeffs, gamma in events:
            keep &= np.abs(xi + w[:, :len(coeffs)] @ coeffs) <= gamma
        drawn += batch
        hits = w[keep]
        count += len(hits)
        if len(hits):
            accepted += hits.sum(axis=0)
    if count == 0:
        raise EmptyEventError("no sample survived the conditioning events")
    return accepted / count


# --------------------------------------------------------------------------
# State-based estimator
# --------------------------------------------------------------------------

class StateBasedEstimator:
    """Conditional mean under the |X| > gamma switching rule.

    ``zeta`` tracks the input-driven part of the plant state since the last
    anchor; the gated density tracks the accumulated disturbance conditioned
    on every silence slab the controller has observed so far (the slab for
    step t+j becomes known only at t+j+tau).  The conditional mean is then
    x_hat = zeta_m + a^tau * E[s_{m-tau} | observed slabs].
    """

    def __init__(self, p: SystemParams, model: NoiseModel, gamma: float,
                 grid_points: int = 801):
        self.a, self.b, self.tau = p.a, p.b, p.tau
        self.gamma = float(gamma)
        self.model = model
        half = 4.0 * max(self.gamma, model.sigma) + 16.0 * model.sigma
        n = grid_points if grid_points % 2 == 1 else grid_points + 1
        self._grid = np.linspace(-half, half, n)
        self._kernel = _NoiseKernel(model, float(self._grid[1] - self._grid[0]))
        self.pending_inputs = deque([0.0] * self.tau, maxlen=self.tau)
        self._anchor(0.0, -self.tau)

    def _anchor(self, x_sample: float, when: int) -> None:
        self.anchor_time = when
        self.zeta_hist = [float(x_sample)]
        zeta = float(x_sample)
        for u in self.pending_inputs:
            zeta = self.a * zeta + self.b * u
            self.zeta_hist.append(zeta)
        self.m = self.tau
        self.q = 0
        self.density = TruncatedSmDensity.point_mass(self._grid)

    def reanchor(self, x_sample: float, when: int | None = None) -> None:
        self._anchor(x_sample, when if when is not None else self.anchor_time)

    def observe_silence(self, j: int) -> None:
        """Fold in the newly revealed slab |zeta_j + s_j| <= gamma.

        Deterministic pre-history slabs are skipped by the caller, so each
        observed slab absorbs exactly one real disturbance.
        """
        self.q += 1
        zeta_j = self.zeta_hist[j]
        moved = self.density.push(self.a, self._kernel)
        gated = _gate_interval(moved, -self.gamma - zeta_j, self.gamma - zeta_j)
        mass = gated.mass()
        if mass < _EVENT_FLOOR:
            raise EmptyEventError(f"silence event mass {mass:.3e} at slab {j}")
        self.density = gated.normalized()

    @property
    def bias(self) -> float:
        """a^tau-weighted conditional mean of the observed disturbance window."""
        if self.q == 0:
            return 0.0
        mean = float((self.density.weights * self.density.grid).sum() * self.density.step)
        return self.a**self.tau * mean

    @property
    def x_hat(self) -> float:
        return self.zeta_hist[self.m] + self.bias

    def advance(self, u: float) -> None:
        self.zeta_hist.append(self.a * self.zeta_hist[-1] + self.b * u)
        self.pending_inputs.append(u)
        self.m += 1


def _gate_interval(d: TruncatedSmDensity, lo: float, hi: float) -> TruncatedSmDensity:
    half = 0.5 * d.step
    cell_lo = np.maximum(d.grid - half, lo)
    cell_hi = np.minimum(d.grid + half, hi)
    frac = np.clip((cell_hi - cell_lo) / d.step, 0.0, 1.0)
    w2 = None if d.w2_weights is None else d.w2_weights * frac
    return TruncatedSmDensity(d.grid, d.weights * frac, w2, d.survival_prob)


def control_state_based(est: StateBasedEstimator, gain: float) -> float:
    """Linear feedback on the silence-aware conditional mean."""
    return -gain * est.x_hat
