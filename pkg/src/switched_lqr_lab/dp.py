"""Constrained dynamic program on the (stage, budget) lattice.

The accumulated disturbance since the last update, together with the
remaining budget, is the state of an equivalent estimation-error problem.
``solve_dp`` sweeps that lattice backward with exact value functions
(dense symmetric grids for continuous noise, exact atom sets for finite
noise), extracts the per-cell thresholds where switching becomes optimal,
then runs a forward density propagation to fill the closed-form coefficient
recursions and to cross-check the optimal value.

``oracle_enumerate`` independently minimizes over *every* deterministic
history-feedback switching policy on the full noise tree (no sufficient
statistic, no threshold assumption) so small instances can certify both the
optimal value and the threshold structure of its minimizers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from .core import (
    ExplosionGuard,
    LabError,
    MassUnderflow,
    NoiseModel,
    SystemParams,
    ValidationError,
)

_EVEN_TOL = 1e-10
_MASS_FLOOR = 1e-12


def geo_tau(a: float, tau: int) -> float:
    """Stage-cost constant: sum of a^{2 i} over the delay window."""
    if tau < 1:
        raise ValidationError("tau must be at least 1")
    return float(sum(a ** (2 * i) for i in range(tau)))


# --------------------------------------------------------------------------
# Density representations
# --------------------------------------------------------------------------

class TruncatedSmDensity:
    """Density of the accumulated disturbance on a symmetric uniform grid.

    ``weights`` are density values; mass is Riemann (cell) summed.  The
    optional ``w2_weights`` array carries E[W^2 | s] * f(s) for the noise
    variable absorbed by the most recent convolution, which the coefficient
    recursions condition on.
    """

    def __init__(self, grid: np.ndarray, weights: np.ndarray,
                 w2_weights: np.ndarray | None = None, survival_prob: float = 1.0):
        self.grid = grid
        self.weights = weights
        self.w2_weights = w2_weights
        self.survival_prob = survival_prob

    @staticmethod
    def point_mass(grid: np.ndarray, mass: float = 1.0) -> "TruncatedSmDensity":
        f = np.zeros_like(grid)
        step = grid[1] - grid[0]
        f[len(grid) // 2] = mass / step
        return TruncatedSmDensity(grid, f)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def mass(self) -> float:
        return float(self.weights.sum() * self.step)

    def mass_inside(self, theta: float) -> float:
        return float(self._inside_products(theta, self.weights) * self.step)

    def w2_mass_inside(self, theta: float) -> float:
        if self.w2_weights is None:
            return self.mass_inside(theta) * float("nan")
        return float(self._inside_products(theta, self.w2_weights) * self.step)

    def second_moment_inside(self, theta: float) -> float:
        return float(self._inside_products(theta, self.weights * self.grid**2) * self.step)

    def _inside_fractions(self, theta: float) -> np.ndarray:
        """Per-cell inclusion fraction of the event {s^2 < theta}."""
        if math.isinf(theta):
            return np.ones_like(self.grid)
        cut = math.sqrt(max(theta, 0.0))
        half = 0.5 * self.step
        lo = np.maximum(self.grid - half, -cut)
        hi = np.minimum(self.grid + half, cut)
        return np.clip((hi - lo) / self.step, 0.0, 1.0)

    def _inside_products(self, theta: float, arr: np.ndarray) -> float:
        return float((arr * self._inside_fractions(theta)).sum())

    def gate(self, theta: float) -> "TruncatedSmDensity":
        frac = self._inside_fractions(theta)
        w2 = None if self.w2_weights is None else self.w2_weights * frac
        return TruncatedSmDensity(self.grid, self.weights * frac, w2, self.survival_prob)

    def push(self, a: float, kernel: "_NoiseKernel") -> "TruncatedSmDensity":
        """Law of a*s + W given the current law of s, with E[W^2|.] tracking."""
        scaled = self._scale(a)
        f = kernel.convolve(scaled)
        w2 = kernel.convolve_w2(scaled)
        return TruncatedSmDensity(self.grid, f, w2)

    def _scale(self, a: float) -> np.ndarray:
        if a == 1.0:
            return self.weights.copy()
        if a == 0.0:
            out = np.zeros_like(self.weights)
            out[len(self.grid) // 2] = self.weights.sum()
            return out
        return np.interp(self.grid / a, self.grid, self.weights, left=0.0, right=0.0) / abs(a)

    def evenness_gap(self) -> float:
        scale = max(float(np.abs(self.weights).max()), 1e-300)
        return float(np.abs(self.weights - self.weights[::-1]).max() / scale)

    def normalized(self) -> "TruncatedSmDensity":
        m = self.mass()
        if m < _MASS_FLOOR:
            raise MassUnderflow(f"conditioned density mass {m:.3e} below floor")
        w2 = None if self.w2_weights is None else self.w2_weights / m
        return TruncatedSmDensity(self.grid, self.weights / m, w2, self.survival_prob)

    def scaled_by(self, factor: float) -> "TruncatedSmDensity":
        w2 = None if self.w2_weights is None else self.w2_weights * factor
        return TruncatedSmDensity(self.grid, self.weights * factor, w2, self.survival_prob)

    def add(self, other: "TruncatedSmDensity") -> "TruncatedSmDensity":
        w2a = self.w2_weights if self.w2_weights is not None else np.zeros_like(self.weights)
        w2b = other.w2_weights if other.w2_weights is not None else np.zeros_like(other.weights)
        return TruncatedSmDensity(self.grid, self.weights + other.weights, w2a + w2b)


class _NoiseKernel:
    """Noise pdf sampled on the working grid spacing, mass-normalized."""

    def __init__(self, model: NoiseModel, step: float):
        if model.kind == "gaussian":
            halfwidth = 9.0 * model.sigma
        elif model.kind == "laplace":
            halfwidth = 24.0 * model.laplace_scale
        elif model.kind == "uniform":
            halfwidth = model.half_width + step
        else:
            raise LabError("grid kernel needs a continuous noise model")
        n = max(int(math.ceil(halfwidth / step)), 1)
        w = np.arange(-n, n + 1) * step
        pdf = model.pdf(w) * step
        total = pdf.sum()
        self.weights = pdf / total
        self.w2_weights = (w * w * model.pdf(w) * step) / total

    def convolve(self, f: np.ndarray) -> np.ndarray:
        return _same_convolve(f, self.weights)

    def convolve_w2(self, f: np.ndarray) -> np.ndarray:
        return _same_convolve(f, self.w2_weights)


def _same_convolve(f: np.ndarray, kern: np.ndarray) -> np.ndarray:
    if len(f) * len(kern) > 1 << 18:
        full = fftconvolve(f, kern)
    else:
        full = np.convolve(f, kern)
    lo = (len(kern) - 1) // 2
    return full[lo:lo + len(f)]


class DiscreteSmDensity:
    """Exact atom representation of the accumulated disturbance."""

    def __init__(self, atoms: dict[float, float], w2: dict[float, float] | None = None,
                 survival_prob: float = 1.0):
        self.atoms = atoms
        self.w2 = w2 if w2 is not None else {}
        self.survival_prob = survival_prob

    @staticmethod
    def point_mass(mass: float = 1.0) -> "DiscreteSmDensity":
        return DiscreteSmDensity({0.0: mass})

    def mass(self) -> float:
        return float(sum(self.atoms.values()))

    def mass_inside(self, theta: float) -> float:
        return float(sum(p for s, p in self.atoms.items() if s * s < theta))

    def w2_mass_inside(self, theta: float) -> float:
        return float(sum(v for s, v in self.w2.items() if s * s < theta))

    def second_moment_inside(self, theta: float) -> float:
        return float(sum(p * s * s for s, p in self.atoms.items() if s * s < theta))

    def gate(self, theta: float) -> "DiscreteSmDensity":
        keep = {s: p for s, p in self.atoms.items() if s * s < theta}
        w2 = {s: v for s, v in self.w2.items() if s * s < theta}
        return DiscreteSmDensity(keep, w2, self.survival_prob)

    def push(self, a: float, model: NoiseModel) -> "DiscreteSmDensity":
        out: dict[float, float] = {}
        w2: dict[float, float] = {}
        for s, p in self.atoms.items():
            for wi, pi in zip(model.support, model.probs):
                nxt = a * s + wi
                out[nxt] = out.get(nxt, 0.0) + p * pi
                w2[nxt] = w2.get(nxt, 0.0) + p * pi * wi * wi
        return DiscreteSmDensity(out, w2)

    def evenness_gap(self) -> float:
        scale = max((abs(p) for p in self.atoms.values()), default=0.0) or 1e-300
        gap = 0.0
        for s, p in self.atoms.items():
            gap = max(gap, abs(p - self.atoms.get(-s, 0.0)) / scale)
        return gap

    def normalized(self) -> "DiscreteSmDensity":
        m = self.mass()
        if m < _MASS_FLOOR:
            raise MassUnderflow(f"conditioned density mass {m:.3e} below floor")
        return DiscreteSmDensity({s: p / m for s, p in self.atoms.items()},
                                 {s: v / m for s, v in self.w2.items()},
                                 self.survival_prob)

    def scaled_by(self, factor: float) -> "DiscreteSmDensity":
        return DiscreteSmDensity({s: p * factor for s, p in self.atoms.items()},
                                 {s: v * factor for s, v in self.w2.items()},
                                 self.survival_prob)

    def add(self, other: "DiscreteSmDensity") -> "DiscreteSmDensity":
        atoms = dict(self.atoms)
        for s, p in other.atoms.items():
            atoms[s] = atoms.get(s, 0.0) + p
        w2 = dict(self.w2)
        for s, v in other.w2.items():
            w2[s] = w2.get(s, 0.0) + v
        return DiscreteSmDensity(atoms, w2)


def propagate_sm_density(density, model: NoiseModel, a: float, theta: float):
    """One no-switch transition of the conditioned disturbance law.

    Gates the incoming density at ``theta`` (the current stage threshold on
    S^2), records the survival probability and the conditional second moment
    of the most recently absorbed noise on the surviving event, then pushes
    the surviving mass through s' = a s + W.

    Returns ``(next_density, p_no_switch, w2_cond)`` with the next density
    renormalized to unit mass.
    """
    total = density.mass()
    if total < _MASS_FLOOR:
        raise MassUnderflow(f"incoming density mass {total:.3e} below floor")
    inside = density.mass_inside(theta)
    p_no_switch = inside / total
    if density_has_w2(density) and inside > _MASS_FLOOR:
        w2_cond = density.w2_mass_inside(theta) / inside
    else:
        w2_cond = model.sigma**2
    gated = density.gate(theta)
    if gated.mass() < _MASS_FLOOR:
        raise MassUnderflow(f"survival probability {p_no_switch:.3e} below floor")
    if isinstance(density, DiscreteSmDensity):
        nxt = gated.normalized().push(a, model)
    else:
        nxt = gated.normalized().push(a, _NoiseKernel(model, density.step))
    nxt.survival_prob = p_no_switch
    return nxt, p_no_switch, w2_cond


def density_has_w2(density) -> bool:
    if isinstance(density, DiscreteSmDensity):
        return bool(density.w2)
    return density.w2_weights is not None


def density_to_csv(density) -> str:
    """Debug dump of a conditioned disturbance law."""
    buf = io.StringIO()
    buf.write("# switched-lqr-lab v1\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "weight"])
    if isinstance(density, DiscreteSmDensity):
        for s in sorted(density.atoms):
            writer.writerow([repr(s), repr(density.atoms[s])])
    else:
        for s, f in zip(density.grid, density.weights):
            writer.writerow([repr(float(s)), repr(float(f))])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

@dataclass
class DpTables:
    """Per-(stage, budget) value coefficients and switching thresholds."""

    horizon: int
    tau: int
    budget: int
    sigma: float
    geo: float
    s: dict[tuple[int, int], float] = field(default_factory=dict)
    c0: dict[tuple[int, int], float] = field(default_factory=dict)
    c1: dict[tuple[int, int], float] = field(default_factory=dict)
    z0: dict[tuple[int, int], float] = field(default_factory=dict)
    z1: dict[tuple[int, int], float] = field(default_factory=dict)
    alpha: dict[tuple[int, int], float] = field(default_factory=dict)
    value: float = float("nan")
    value_forward: float = float("nan")
    density_evenness_gap: float = 0.0
    grid_half_width: float = 0.0
    prehistory_cost: float = 0.0
    non_threshold_cells: list[tuple[int, int]] = field(default_factory=list)

    @property
    def stages(self) -> int:
        return self.horizon - self.tau

    def cells(self) -> list[tuple[int, int]]:
        return sorted(self.alpha.keys() | self.s.keys())

    def threshold_table(self):
        from .policies import ThresholdTable
        return ThresholdTable(alpha=dict(self.alpha))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# switched-lqr-lab v1\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "j", "s", "c0", "c1", "z0", "z1", "alpha"])
        for key in self.cells():
            row = [key[0], key[1]]
            for table in (self.s, self.c0, self.c1, self.z0, self.z1, self.alpha):
                row.append(repr(table[key]) if key in table else "")
            writer.writerow(row)
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, horizon: int = 0, tau: int = 1, budget: int = 0,
                 sigma: float = 1.0) -> "DpTables":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        if not rows or rows[0][:2] != ["k", "j"]:
            raise ValidationError("DP CSV must carry the k,j,... header")
        out = DpTables(horizon, tau, budget, sigma, geo_tau(1.0, tau))
        names = rows[0][2:]
        tables = {"s": out.s, "c0": out.c0, "c1": out.c1,
                  "z0": out.z0, "z1": out.z1, "alpha": out.alpha}
        for row in rows[1:]:
            key = (int(row[0]), int(row[1]))
            for name, cell in zip(names, row[2:]):
                if cell != "":
                    tables[name][key] = float(cell)
        return out


def feasible_cells(p: SystemParams) -> list[tuple[int, int]]:
    """Lattice cells reachable from (stage 0, full budget)."""
    q0 = p.budget
    out = []
    for k in range(p.effective_horizon):
        for j in range(max(0, q0 - k), q0 + 1):
            out.append((k, j))
    return out


def _zero_budget_row(p: SystemParams) -> tuple[dict[int, float], dict[int, float]]:
    """Closed-form never-switch coefficients s_{k0}, c_{k00} for every stage."""
    stages = p.effective_horizon
    geo = geo_tau(p.a, p.tau)
    a2t = p.a ** (2 * p.tau)
    s0, c00 = {}, {}
    s_now, c_now = a2t, geo
    for k in range(stages - 1, -1, -1):
        s0[k], c00[k] = s_now, c_now
        s_now, c_now = a2t + p.a**2 * s_now, s_now + c_now + geo
    return s0, c00


def boundary_tables(p: SystemParams) -> DpTables:
    """Closed-form boundary cells: zero-budget row and the always-switch wedge.

    Only cells reachable from (stage 0, full budget) are filled.
    """
    stages = p.effective_horizon
    geo = geo_tau(p.a, p.tau)
    q0 = p.budget
    out = DpTables(p.horizon, p.tau, q0, p.sigma_w, geo)
    s0, c00 = _zero_budget_row(p)
    for k in range(stages):
        if q0 - k <= 0:
            out.s[(k, 0)] = s0[k]
            out.c0[(k, 0)] = c00[k]
            out.z0[(k, 0)] = 0.0
        for j in range(max(stages - k, q0 - k, 1), q0 + 1):
            out.c1[(k, j)] = (stages - k) * geo
            out.z1[(k, j)] = 0.0
            out.alpha[(k, j)] = 0.0
    return out


# --------------------------------------------------------------------------
# Backward value induction
# --------------------------------------------------------------------------

class _GridBackend:
    def __init__(self, p: SystemParams, model: NoiseModel, grid_points: int,
                 half_width: float | None = None):
        if half_width is None:
            stages = p.effective_horizon
            var_span = sum(p.a ** (2 * i) for i in range(min(stages, 24)))
            half_width = model.sigma * max(16.0, min(12.0 * math.sqrt(var_span), 600.0))
        n = grid_points if grid_points % 2 == 1 else grid_points + 1
        self.half_width = float(half_width)
        self.grid = np.linspace(-half_width, half_width, n)
        self.step = float(self.grid[1] - self.grid[0])
        self.kernel = _NoiseKernel(model, self.step)
        self.model = model

    def fresh_density(self, mass: float = 1.0) -> TruncatedSmDensity:
        return TruncatedSmDensity.point_mass(self.grid, mass)

    def values_at_fresh_noise(self, v_repr: np.ndarray) -> float:
        """E[V(W)] for a value function tabulated on the grid."""
        kern = self.kernel.weights
        n = (len(kern) - 1) // 2
        centre = len(self.grid) // 2
        if n <= centre:
            window = v_repr[centre - n:centre + n + 1]
        else:
            window = np.interp(np.arange(-n, n + 1) * self.step, self.grid, v_repr,
                               left=v_repr[0], right=v_repr[-1])
        return float((kern * window).sum())

    def continuation(self, v_repr: np.ndarray, a: float) -> np.ndarray:
        """E[V(a s + W)] on the grid; tails extend with the edge constants."""
        kern = self.kernel.weights
        pad = (len(kern) - 1) // 2 + 1
        ext = np.concatenate([np.full(pad, v_repr[0]), v_repr, np.full(pad, v_repr[-1])])
        conv = _same_convolve(ext, kern)[pad:pad + len(v_repr)]
        if a == 1.0:
            return conv
        return np.interp(a * self.grid, self.grid, conv, left=conv[0], right=conv[-1])

    def alpha_from_values(self, diff: np.ndarray, sigma2: float):
        """Normalized threshold where the no-switch surplus crosses zero."""
        centre = len(self.grid) // 2
        half = diff[centre:]
        xs = self.grid[centre:]
        if half[0] >= 0.0:
            return 0.0, False
        idx = np.argmax(half >= 0.0)
        if half[idx] < 0.0:
            return float(xs[-1] ** 2 / sigma2), False
        x0, x1 = xs[idx - 1], xs[idx]
        f0, f1 = half[idx - 1], half[idx]
        cut = x0 + (x1 - x0) * (-f0) / (f1 - f0)
        return float(cut * cut / sigma2), False


class _AtomBackend:
    def __init__(self, p: SystemParams, model: NoiseModel):
        self.model = model
        stages = p.effective_horizon
        total_nodes = sum(len(model.support) ** min(k, 12) for k in range(stages + 1))
        if len(model.support) ** stages > 4_000_000 or total_nodes > 4_000_000:
            raise ExplosionGuard("atom supports would explode; shrink the instance")
        sets = [np.array([0.0])]
        w = np.asarray(model.support, dtype=float)
        for k in range(stages):
            nxt = (p.a * sets[-1][:, None] + w[None, :]).ravel()
            sets.append(np.unique(np.concatenate([nxt, w])))
        self.atom_sets = sets
        self.index = [{float(s): i for i, s in enumerate(arr)} for arr in sets]

    def fresh_density(self, mass: float = 1.0) -> DiscreteSmDensity:
        return DiscreteSmDensity.point_mass(mass)

    def values_at_fresh_noise(self, v_repr: np.ndarray, k_next: int) -> float:
        idx = self.index[k_next]
        return float(sum(pi * v_repr[idx[float(wi)]]
                         for wi, pi in zip(self.model.support, self.model.probs)))

    def continuation(self, v_repr: np.ndarray, a: float, k: int) -> np.ndarray:
        """E[V(a s + W)] for every atom s at stage k."""
        idx = self.index[k + 1]
        out = np.zeros(len(self.atom_sets[k]))
        for i, s in enumerate(self.atom_sets[k]):
            acc = 0.0
            for wi, pi in zip(self.model.support, self.model.probs):
                acc += pi * v_repr[idx[float(a * s + wi)]]
            out[i] = acc
        return out

    def alpha_from_values(self, diff: np.ndarray, sigma2: float, k: int):
        """Separating threshold for the per-atom fire decisions (>= fires)."""
        s2 = self.atom_sets[k] ** 2
        fire = diff >= 0.0
        no_fire_max = float(s2[~fire].max()) if (~fire).any() else -1.0
        fire_min = float(s2[fire].min()) if fire.any() else float("inf")
        if math.isinf(fire_min):
            return no_fire_max / sigma2 + 1.0, False
        if fire_min > no_fire_max:
            if no_fire_max < 0.0:
                return 0.0, False
            return 0.5 * (no_fire_max + fire_min) / sigma2, False
        # decisions not monotone in s^2: publish the smallest firing atom
        return fire_min / sigma2, True


def solve_dp(p: SystemParams, model: NoiseModel, grid_points: int = 4097) -> DpTables:
    """Backward induction over the budget lattice, thresholds, coefficients.

    The value functions are computed without any parametric ansatz, so the
    exported thresholds are the exact indifference points of the two
    actions.  The coefficient tables are then filled by the closed-form
    recursions, with every conditional probability and conditional noise
    moment evaluated from the forward-propagated truncated densities under
    those thresholds.

    For expanding plants the thresholds of budget-starved cells grow
    geometrically; the grid is capped around the operating band and cells
    whose indifference point falls beyond the edge keep a never-fire
    sentinel threshold at the edge.  A second pass re-solves on a tighter
    range when the coarse pass shows the band is much narrower.
    """
    tables = _solve_dp_once(p, model, grid_points, None)
    if model.kind == "discrete" or p.effective_horizon == 0 or not tables.alpha:
        return tables
    sigma2 = model.sigma**2
    half1 = tables.grid_half_width
    edge_alpha = (0.98 * half1) ** 2 / sigma2
    band = [a for a in tables.alpha.values() if a < edge_alpha]
    if not band:
        return tables
    s_max = math.sqrt(max(band) * sigma2 + sigma2)
    half2 = max(30.0 * model.sigma,
                4.0 * max(abs(p.a), 1.0) * s_max + 40.0 * model.sigma)
    if half2 < 0.67 * half1:
        return _solve_dp_once(p, model, grid_points, half2)
    return tables


def _solve_dp_once(p: SystemParams, model: NoiseModel, grid_points: int,
                   half_width: float | None) -> DpTables:
    stages = p.effective_horizon
    q0 = p.budget
    sigma2 = model.sigma**2
    geo = geo_tau(p.a, p.tau)
    a2t = p.a ** (2 * p.tau)
    tables = boundary_tables(p)
    tables.sigma = model.sigma

    discrete = model.kind == "discrete"
    backend = _AtomBackend(p, model) if discrete else \
        _GridBackend(p, model, grid_points, half_width)
    tables_half = 0.0 if discrete else backend.half_width

    # zero-budget row closed forms, reused as continuation constants
    s0, c00 = _zero_budget_row(p)
    alpha_full: dict[tuple[int, int], float] = dict(tables.alpha)

    def surplus_value(k: int) -> float:
        return (stages - k) * geo * sigma2

    # stored value representations for interior cells only
    stored: dict[tuple[int, int], np.ndarray] = {}

    def rep_points(k: int) -> np.ndarray:
        return backend.atom_sets[k] if discrete else backend.grid

    def value_repr(k: int, j: int) -> np.ndarray:
        """V_k(., j) tabulated on stage-k representation points."""
        pts = rep_points(k)
        if k >= stages:
            return np.zeros(len(pts))
        if j <= 0:
            return s0[k] * pts**2 + c00[k] * sigma2
        if j >= stages - k:
            return np.full(len(pts), surplus_value(k))
        return stored[(k, j)]

    for k in range(stages - 1, -1, -1):
        j_hi = min(q0, stages - k - 1)
        for j in range(1, j_hi + 1):
            v_next_stay = value_repr(k + 1, j)
            v_next_go = value_repr(k + 1, j - 1)
            if k + 1 >= stages:
                ev_go = 0.0
                cont = np.zeros(len(rep_points(k)))
            else:
                if j - 1 == 0:
                    ev_go = (s0[k + 1] + c00[k + 1]) * sigma2
                elif j - 1 >= stages - (k + 1):
                    ev_go = surplus_value(k + 1)
                elif discrete:
                    ev_go = backend.values_at_fresh_noise(v_next_go, k + 1)
                else:
                    ev_go = backend.values_at_fresh_noise(v_next_go)
                if discrete:
                    cont = backend.continuation(v_next_stay, p.a, k)
                else:
                    cont = backend.continuation(v_next_stay, p.a)
            pts = rep_points(k)
            v1 = geo * sigma2 + ev_go
            v0 = a2t * pts**2 + geo * sigma2 + cont
            diff = v0 - v1
            if discrete:
                alpha, flag = backend.alpha_from_values(diff, sigma2, k)
            else:
                alpha, flag = backend.alpha_from_values(diff, sigma2)
            if flag:
                tables.non_threshold_cells.append((k, j))
            alpha_full[(k, j)] = alpha
            if j >= q0 - k:
                tables.alpha[(k, j)] = alpha
            stored[(k, j)] = np.minimum(v0, v1)

    # errors while the pipeline first fills are policy-independent
    prehistory = sigma2 * sum(geo_tau(p.a, k) for k in range(1, min(p.tau, p.horizon)))
    if q0 == 0:
        tables.value = (c00[0] * sigma2 if stages > 0 else 0.0) + prehistory
    else:
        root = value_repr(0, q0)
        if discrete:
            tables.value = float(root[backend.index[0][0.0]]) + prehistory
        else:
            tables.value = float(np.interp(0.0, backend.grid, root)) + prehistory
    tables.prehistory_cost = prehistory

    tables.grid_half_width = tables_half
    _forward_coefficients(p, model, backend, tables, s0, c00, discrete, alpha_full)
    return tables


def _truncated_noise_stats(model: NoiseModel, theta: float) -> tuple[float, float]:
    """(Pr(W^2 < theta), E[W^2 | W^2 < theta]) for a fresh disturbance."""
    sigma2 = model.sigma**2
    if theta <= 0.0:
        return 0.0, sigma2
    if model.kind == "discrete":
        pr = sum(pi for wi, pi in zip(model.support, model.probs) if wi * wi < theta)
        if pr <= 0.0:
            return 0.0, sigma2
        m2 = sum(pi * wi * wi for wi, pi in zip(model.support, model.probs) if wi * wi < theta)
        return float(pr), float(m2 / pr)
    cut = math.sqrt(theta)
    pr = float(model.cdf(cut) - model.cdf(-cut))
    if pr <= 0.0:
        return 0.0, sigma2
    m2 = quad(lambda w: w * w * model.pdf(w), -cut, cut, limit=200)[0]
    return pr, float(m2 / pr)


def _forward_coefficients(p, model, backend, tables: DpTables, s0, c00, discrete,
                          alpha_full) -> None:
    """Forward density pass + the diagonal/horizontal coefficient recursions."""
    stages = p.effective_horizon
    q0 = p.budget
    sigma2 = model.sigma**2
    geo = tables.geo
    a2t = p.a ** (2 * p.tau)

    def theta_of(k: int, j: int) -> float:
        if j <= 0:
            return float("inf")
        return alpha_full[(k, j)] * sigma2

    def push(density):
        if discrete:
            return density.push(p.a, model)
        return density.push(p.a, backend.kernel)

    # forward sweep: per-cell arrival laws plus the silence-sourced statistics
    horiz: dict[tuple[int, int], tuple[float, float]] = {}
    cells_now: dict[int, object] = {q0: backend.fresh_density(1.0)}
    value_forward = 0.0
    even_gap = 0.0
    for k in range(stages):
        cells_next: dict[int, object] = {}
        for j, dens in sorted(cells_now.items()):
            total = dens.mass()
            if total < 1e-300:
                continue
            even_gap = max(even_gap, dens.evenness_gap())
            theta = theta_of(k, j)
            inside = dens.mass_inside(theta)
            value_forward += geo * sigma2 * total + a2t * dens.second_moment_inside(theta)
            gated = dens.gate(theta)
            if k + 1 < stages:
                if inside > 1e-300:
                    moved = push(gated)
                    even_gap = max(even_gap, moved.evenness_gap())
                    if j >= 1:
                        nxt_theta = theta_of(k + 1, j)
                        p_ns = moved.mass_inside(nxt_theta) / max(moved.mass(), 1e-300)
                        denom = moved.mass_inside(nxt_theta)
                        w2c = moved.w2_mass_inside(nxt_theta) / denom if denom > 1e-300 else sigma2
                        horiz[(k, j)] = (p_ns, w2c)
                    cells_next[j] = moved if j not in cells_next else cells_next[j].add(moved)
                fired = total - inside
                if j >= 1 and fired > 1e-300:
                    fresh = push(backend.fresh_density(fired))
                    cells_next[j - 1] = (fresh if j - 1 not in cells_next
                                         else cells_next[j - 1].add(fresh))
        cells_now = cells_next
    tables.value_forward = value_forward + tables.prehistory_cost
    tables.density_evenness_gap = even_gap

    def horizontal_stats(k: int, j: int) -> tuple[float, float]:
        if (k, j) in horiz:
            return horiz[(k, j)]
        # cell unreachable under the optimal thresholds; anchor a fresh run
        moved = push(backend.fresh_density(1.0))
        nxt_theta = theta_of(k + 1, j)
        p_ns = moved.mass_inside(nxt_theta)
        denom = p_ns
        w2c = moved.w2_mass_inside(nxt_theta) / denom if denom > 1e-300 else sigma2
        return p_ns, w2c

    for k in range(stages - 1, -1, -1):
        for j in range(max(0, q0 - k), q0 + 1):
            if j >= 1:
                if k == stages - 1 or j >= stages - k:
                    pass  # boundary_tables already wrote the wedge constants
                elif j - 1 == 0:
                    tables.c1[(k, j)] = s0[k + 1] + c00[k + 1] + geo
                    tables.z1[(k, j)] = 0.0
                else:
                    pr_ns, w2c = _truncated_noise_stats(model, theta_of(k + 1, j - 1))
                    tables.c1[(k, j)] = (pr_ns * tables.c0[(k + 1, j - 1)]
                                         + (1.0 - pr_ns) * tables.c1[(k + 1, j - 1)] + geo)
                    tables.z1[(k, j)] = (pr_ns * (tables.z0[(k + 1, j - 1)]
                                                  + tables.s[(k + 1, j - 1)] * w2c)
                                         + (1.0 - pr_ns) * tables.z1[(k + 1, j - 1)])
            if j == 0 or (k, j) in tables.s:
                continue
            if k == stages - 1:
                tables.s[(k, j)] = a2t
                tables.c0[(k, j)] = geo
                tables.z0[(k, j)] = 0.0
            else:
                p_ns, w2c = horizontal_stats(k, j)
                tables.s[(k, j)] = a2t + p.a**2 * p_ns * tables.s[(k + 1, j)]
                tables.c0[(k, j)] = (p_ns * tables.c0[(k + 1, j)]
                                     + (1.0 - p_ns) * tables.c1[(k + 1, j)] + geo)
                tables.z0[(k, j)] = (p_ns * (tables.z0[(k + 1, j)]
                                             + tables.s[(k + 1, j)] * w2c)
                                     + (1.0 - p_ns) * tables.z1[(k + 1, j)])


# --------------------------------------------------------------------------
# Exhaustive policy oracle
# --------------------------------------------------------------------------

@dataclass
class OracleReport:
    min_cost: float
    nodes_visited: int
    minimizer_count: int
    has_threshold_minimizer: bool
    cells: dict[tuple[int, int], dict[float, frozenset[int]]]
    evenness_gap: float

    def decisions_compatible(self, decide) -> bool:
        """True when ``decide(k, j, s_sq)`` picks an optimal action everywhere."""
        for (k, j), by_s2 in self.cells.items():
            for s2, allowed in by_s2.items():
                if decide(k, j, s2) not in allowed:
                    return False
        return True


def oracle_enumerate(p: SystemParams, noise_support, probs,
                     node_budget: int = 2_000_000) -> OracleReport:
    """Exact optimum of the error problem over all history-feedback policies.

    Walks the full noise tree carrying the raw history state (error,
    switch-side accumulation, pending delayed decisions, noise window) and
    minimizes per history node, which realizes the minimum over every
    deterministic budget-feasible policy without assuming any sufficient
    statistic or threshold structure.  Costs are accumulated through the
    literal error recursion, keeping this path independent of the lattice
    solver it certifies.
    """
    support = [float(w) for w in noise_support]
    pr = [float(x) for x in probs]
    if len(support) > 3:
        raise ExplosionGuard("supports beyond three points are not enumerable")
    n, tau, q0 = p.horizon, p.tau, p.budget
    k_eff = p.effective_horizon
    counter = {"nodes": 0}
    values: dict[tuple, float] = {}
    cells: dict[tuple[int, int], dict[float, set[int]]] = {}

    def state_key(k, eps, s_acc, pend, wind):
        return (k, round(eps, 12), round(s_acc, 12), pend,
                tuple(round(w, 12) for w in wind))

    def fresh_term(wind_full) -> float:
        return sum(p.a ** (tau - 1 - j) * wind_full[j] for j in range(tau))

    def recurse(k: int, eps: float, s_acc: float, pend: tuple, wind: tuple, b: int) -> float:
        counter["nodes"] += 1
        if counter["nodes"] > node_budget:
            raise ExplosionGuard(f"enumeration exceeded {node_budget} nodes")
        if k == n:
            return 0.0
        key = (state_key(k, eps, s_acc, pend, wind), b)
        if key in values:
            return values[key]
        actions = (0, 1) if (b > 0 and k < k_eff) else (0,)
        best = math.inf
        argmin: set[int] = set()
        for d in actions:
            acc = 0.0
            for wi, pi in zip(support, pr):
                wind_full = wind + (wi,)
                d_eff = pend[0] if tau >= 2 else d
                if d_eff:
                    eps_next = fresh_term(wind_full)
                else:
                    eps_next = p.a * eps + wi
                s_next = wi if d else p.a * s_acc + wi
                pend_next = (pend[1:] + (d,)) if tau >= 2 else ()
                acc += pi * recurse(k + 1, eps_next, s_next, pend_next,
                                    wind_full[1:], b - d)
            if acc < best - 1e-15:
                best = acc
                argmin = {d}
            elif abs(acc - best) <= 1e-15:
                argmin.add(d)
        if len(actions) == 2:
            cell = cells.setdefault((k, b), {})
            s2 = round(s_acc * s_acc, 12)
            if s2 in cell:
                cell[s2] &= argmin
            else:
                cell[s2] = set(argmin)
        total = eps * eps + best
        values[key] = total
        return total

    pend0 = tuple([0] * (tau - 1))
    wind0 = tuple([0.0] * (tau - 1))
    min_cost = recurse(0, 0.0, 0.0, pend0, wind0, q0)

    # evenness of the optimal cost over mirrored histories
    even_gap = 0.0
    for (stt, b), val in values.items():
        k, eps, s_acc, pend, wind = stt
        mirror = ((k, -eps, -s_acc, pend, tuple(-w for w in wind)), b)
        if mirror in values:
            scale = max(abs(val), 1.0)
            even_gap = max(even_gap, abs(val - values[mirror]) / scale)

    frozen = {cell: {s2: frozenset(acts) for s2, acts in by_s2.items()}
              for cell, by_s2 in cells.items()}
    has_thr = all(_threshold_assignment_exists(by_s2) for by_s2 in frozen.values())
    minimizers = 1
    for by_s2 in frozen.values():
        for acts in by_s2.values():
            minimizers *= max(len(acts), 1)
    return OracleReport(min_cost=min_cost, nodes_visited=counter["nodes"],
                        minimizer_count=minimizers, has_threshold_minimizer=has_thr,
                        cells=frozen, evenness_gap=even_gap)


def _threshold_assignment_exists(by_s2: dict[float, frozenset[int]]) -> bool:
    """Is some cut c consistent, firing exactly on s^2 >= c?"""
    points = sorted(by_s2)
    cuts = [0.0] + [s2 for s2 in points] + [math.inf]
    for cut in cuts:
        ok = True
        for s2, allowed in by_s2.items():
            want = 1 if s2 >= cut else 0
            if want not in allowed:
                ok = False
                break
        if ok:
            return True
    return False
