"""Budget-constrained switched-LQR laboratory."""

from .controllers import (
    EstimatorState,
    StateBasedEstimator,
    conditional_truncated_mean,
    control_impulsive,
    control_optimal,
    control_state_based,
    control_zoh,
    slab_events,
)
from .core import (
    BudgetState,
    DelayPipeline,
    NoiseModel,
    SystemParams,
    ValidationError,
    noise_cdf,
    noise_density,
    noise_sample,
    validate_params,
)
from .dp import (
    DpTables,
    OracleReport,
    TruncatedSmDensity,
    boundary_tables,
    geo_tau,
    oracle_enumerate,
    propagate_sm_density,
    solve_dp,
)
from .engine import (
    ControllerSpec,
    PolicySpec,
    RunStats,
    calibrate_rate,
    detect_divergence,
    run_mc,
    run_single,
    step,
    symmetry_statistic,
)
from .experiments import STANDARD_COMBOS, run_combo, simulate_all, sweep_steady
from .lqr import (
    RiccatiSolution,
    equivalent_cost,
    equivalent_cost_general,
    riccati_finite,
    riccati_steady,
)
from .policies import (
    PeriodicSchedule,
    SwitchDecisionInput,
    ThresholdTable,
    build_periodic,
    decide_bernoulli,
    decide_state_based,
    decide_threshold,
)

__version__ = "0.1.0"
