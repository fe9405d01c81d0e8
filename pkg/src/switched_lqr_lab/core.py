"""Domain types shared by every other module.

Plant/cost/constraint parameters, the symmetric zero-mean noise models,
the fixed-delay feedback pipeline, and the switching-budget bookkeeping.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, ndtri


# --------------------------------------------------------------------------
# Errors
# --------------------------------------------------------------------------

class LabError(Exception):
    """Base class for every failure this package raises deliberately."""


class ValidationError(LabError):
    """Parameter set violates an invariant (non-causal delay, bad weights...)."""


class NonConvergenceError(LabError):
    """An iterative solver exhausted its iteration cap."""


class CalibrationFailure(LabError):
    """Rate calibration could not move the empirical rate toward the target."""


class MassUnderflow(LabError):
    """A conditioned density lost essentially all probability mass."""


class EmptyEventError(LabError):
    """A conditioning event has probability below the representable floor."""


class ExplosionGuard(LabError):
    """Exhaustive enumeration would exceed the configured node budget."""


class MissingTableEntry(LabError):
    """Threshold table has no entry for the requested (step, budget) cell."""


class FixedPointDivergence(LabError):
    """Self-consistency iteration inside the DP failed to settle."""


# --------------------------------------------------------------------------
# System parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemParams:
    """Scalar plant, quadratic cost, delay and switching-rate constraint.

    The plant is X_{k+1} = a X_k + b U_k + W_k with stage cost q X^2 + r U^2,
    a fixed feedback delay of ``tau`` steps and at most ``floor(horizon*rate)``
    switches over ``horizon`` stages.
    """

    a: float = 1.0
    b: float = 1.0
    q: float = 1.0
    r: float = 1.0
    sigma_w: float = 10.0
    tau: int = 1
    rate: float = 0.4
    horizon: int = 100

    def __post_init__(self):
        validate_params(self)

    @property
    def budget(self) -> int:
        """Initial switching budget Q_0 = floor(N * r_s)."""
        return budget_cap(self.horizon, self.rate)

    @property
    def effective_horizon(self) -> int:
        """Number of decision stages whose switch can still reach the controller."""
        return self.horizon - self.tau


def budget_cap(horizon: int, rate: float) -> int:
    # tiny epsilon guards binary representations of rates like 0.29*100
    return int(math.floor(horizon * rate + 1e-9))


def validate_params(p: SystemParams) -> SystemParams:
    """Return ``p`` unchanged if every invariant holds, raise otherwise."""
    if not isinstance(p.tau, int) or isinstance(p.tau, bool):
        raise ValidationError("tau must be an integer number of steps")
    if p.tau < 1:
        # a zero-delay loop lets the observation depend on the decision it feeds
        raise ValidationError("non-causal: delay tau must be at least 1 step")
    if p.q <= 0:
        raise ValidationError("state weight q must be positive")
    if p.r <= 0:
        raise ValidationError("input weight r must be positive")
    if p.sigma_w <= 0:
        raise ValidationError("disturbance level sigma_w must be positive")
    if not (0.0 < p.rate <= 1.0):
        raise ValidationError("switching rate must lie in (0, 1]")
    if not isinstance(p.horizon, int) or isinstance(p.horizon, bool):
        raise ValidationError("horizon must be an integer")
    if p.horizon <= p.tau + 1:
        raise ValidationError("horizon must exceed tau + 1")
    if p.b == 0:
        raise ValidationError("input gain b must be nonzero")
    return p


# --------------------------------------------------------------------------
# Noise models
# --------------------------------------------------------------------------

_KINDS = ("gaussian", "uniform", "laplace", "discrete")


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean symmetric disturbance with standard deviation ``sigma``.

    ``gaussian``, ``uniform`` and ``laplace`` are the experiment
    distributions; ``discrete`` (finite symmetric support) exists for the
    exact small-instance verification machinery.
    """

    kind: str = "gaussian"
    sigma: float = 10.0
    support: tuple[float, ...] | None = None
    probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        if self.kind != "discrete" and self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.kind == "discrete":
            if not self.support or not self.probs or len(self.support) != len(self.probs):
                raise ValidationError("discrete noise needs matching support and probs")
            w = np.asarray(self.support, dtype=float)
            pr = np.asarray(self.probs, dtype=float)
            if abs(pr.sum() - 1.0) > 1e-12 or (pr < 0).any():
                raise ValidationError("probs must be a distribution")
            if abs(float(pr @ w)) > 1e-12:
                raise ValidationError("discrete noise must have zero mean")
            # symmetry: the signed atoms must carry mirrored mass
            atoms = {}
            for wi, pi in zip(w, pr):
                atoms[round(wi, 12)] = atoms.get(round(wi, 12), 0.0) + pi
            for wi, pi in atoms.items():
                if abs(atoms.get(round(-wi, 12), 0.0) - pi) > 1e-12:
                    raise ValidationError("discrete noise must be symmetric")
            var = float(pr @ w**2)
            object.__setattr__(self, "sigma", math.sqrt(var))

    # -- constructors --------------------------------------------------

    @staticmethod
    def gaussian(sigma: float) -> "NoiseModel":
        return NoiseModel("gaussian", sigma)

    @staticmethod
    def uniform(sigma: float) -> "NoiseModel":
        return NoiseModel("uniform", sigma)

    @staticmethod
    def laplace(sigma: float) -> "NoiseModel":
        return NoiseModel("laplace", sigma)

    @staticmethod
    def discrete(support, probs) -> "NoiseModel":
        return NoiseModel("discrete", 0.0, tuple(float(w) for w in support),
                          tuple(float(p) for p in probs))

    @staticmethod
    def of_kind(kind: str, sigma: float) -> "NoiseModel":
        return NoiseModel(kind, sigma)

    # -- derived constants ----------------------------------------------

    @property
    def half_width(self) -> float:
        """Support half-width of the uniform variant (c solves c^2/3 = sigma^2)."""
        return self.sigma * math.sqrt(3.0)

    @property
    def laplace_scale(self) -> float:
        return self.sigma / math.sqrt(2.0)

    # -- sampling --------------------------------------------------------

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF transform; shared uniforms give common random numbers."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return self.sigma * ndtri(np.clip(u, 1e-16, 1.0 - 1e-16))
        if self.kind == "uniform":
            return self.half_width * (2.0 * u - 1.0)
        if self.kind == "laplace":
            b = self.laplace_scale
            t = np.clip(u, 1e-300, 1.0 - 1e-16)
            return np.where(t < 0.5, b * np.log(2.0 * t), -b * np.log(2.0 * (1.0 - t)))
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, u, side="right")
        return np.asarray(self.support, dtype=float)[np.minimum(idx, len(cum) - 1)]

    def sample(self, rng: np.random.Generator, size=None):
        w = self.from_uniform(rng.random(size if size is not None else ()))
        return float(w) if size is None else w

    # -- density / distribution ------------------------------------------

    def pdf(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s = self.sigma
        if self.kind == "gaussian":
            return np.exp(-0.5 * (w / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
        if self.kind == "uniform":
            c = self.half_width
            return np.where(np.abs(w) <= c, 1.0 / (2.0 * c), 0.0)
        if self.kind == "laplace":
            b = self.laplace_scale
            return np.exp(-np.abs(w) / b) / (2.0 * b)
        raise LabError("discrete noise has no density")

    def cdf(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s = self.sigma
        if self.kind == "gaussian":
            return 0.5 * (1.0 + erf(w / (s * math.sqrt(2.0))))
        if self.kind == "uniform":
            c = self.half_width
            return np.clip((w + c) / (2.0 * c), 0.0, 1.0)
        if self.kind == "laplace":
            b = self.laplace_scale
            return np.where(w < 0, 0.5 * np.exp(w / b), 1.0 - 0.5 * np.exp(-w / b))
        pr = np.zeros_like(w)
        for wi, pi in zip(self.support, self.probs):
            pr = pr + pi * (w >= wi - 1e-15)
        return pr


def noise_sample(model: NoiseModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


def noise_density(model: NoiseModel, w):
    return model.pdf(w)


def noise_cdf(model: NoiseModel, w):
    return model.cdf(w)


# --------------------------------------------------------------------------
# Delay pipeline and budget bookkeeping
# --------------------------------------------------------------------------

class DelayPipeline:
    """FIFO link with a fixed ``tau``-step delay.

    The pair pushed at step k is emitted at step k + tau, which realizes the
    delayed observation Y_k = D_{k-tau} X_{k-tau}.  The buffer is pre-seeded
    as if a switch occurred at step -tau with plant state 0, so the first
    emission (at step 0) re-anchors the estimator.
    """

    def __init__(self, tau: int, seed_initial_switch: bool = True):
        if tau < 1:
            raise ValidationError("non-causal: delay tau must be at least 1 step")
        self.tau = tau
        first = (1, 0.0) if seed_initial_switch else (0, 0.0)
        self._slots = deque([first] + [(0, 0.0)] * (tau - 1))

    def push(self, decision: int, state: float) -> tuple[int, float]:
        """Insert this step's pair, emit the pair from tau steps ago."""
        self._slots.append((int(decision), float(state)))
        return self._slots.popleft()

    def __len__(self) -> int:
        return len(self._slots)


@dataclass
class BudgetState:
    """Remaining switch allowance; never negative."""

    q_remaining: int
    switches_used: int = 0

    def can_switch(self) -> bool:
        return self.q_remaining > 0

    def consume(self, decision: int) -> None:
        if decision:
            if self.q_remaining <= 0:
                raise LabError("switch decision with exhausted budget")
            self.q_remaining -= 1
            self.switches_used += 1


# --------------------------------------------------------------------------
# Seeding
# --------------------------------------------------------------------------

def run_seed(master: int, run_index: int) -> int:
    """Sub-seed for Monte Carlo run ``run_index``: master XOR index."""
    return int(master) ^ int(run_index)


def run_streams(master: int, run_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (noise, policy) generators for one run.

    Both key off run_seed so run order never matters; the second word keeps
    policy randomness from aliasing the disturbance stream.
    """
    s = run_seed(master, run_index)
    return (np.random.default_rng([s, 0]), np.random.default_rng([s, 1]))
