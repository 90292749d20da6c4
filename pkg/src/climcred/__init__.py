"""Climate-conditioned credit portfolio risk engine.

Given a loan portfolio, per-group migration matrices, a recovery model and a
climate scenario (factor intensity trajectories plus per-group adjustments),
the package computes expected losses, Monte Carlo loss distributions,
stressed quantiles, capital charges, Euler risk allocations and reverse-stress
factor expectations. The Monte Carlo hot loop runs on a compiled kernel when
available, with a numpy fallback selected at import time.
"""

__version__ = "0.1.0"

from ._backend import HAVE_COMPILED, active_backend, set_backend
from .allocation import (
    AllocationReport,
    allocate,
    default_bandwidth,
    expected_contributions,
    unexpected_contributions,
)
from .engine import (
    LossBreakdown,
    PreparedModel,
    RecoveryTable,
    ReverseStressResult,
    RiskReport,
    SimulationResult,
    build_report,
    capital_charge,
    closed_form_stressed_loss,
    conditional_loss,
    empirical_quantile,
    expected_loss,
    prepare,
    reverse_stress,
    simulate,
    stressed_quantile,
)
from .errors import (
    CalibrationError,
    ClimcredError,
    EstimatorError,
    InputFormatError,
    LoadingSaturationError,
    SimulationError,
    ValidationError,
)
from .factors import (
    FactorModel,
    LoadingSchedule,
    MacroTrajectory,
    MicroAdjustments,
    build_block_correlation,
    build_schedule,
    loadings_proposed,
    loadings_t1,
    loadings_t2,
    regulatory_correlation,
    sample_factors,
)
from .migration import (
    MigrationMatrix,
    RenewalPolicy,
    ThresholdMatrix,
    balanced_renewal,
    conditional_migration,
    conditional_migration_batch,
    load_migration_file,
    matrix_from_thresholds,
    stressed_migration,
    thresholds,
)
from .portfolio import (
    AggregatedExposure,
    AmortizingProfile,
    ExplicitProfile,
    Loan,
    Portfolio,
    SubportfolioPartition,
    aggregate_ead,
    build_partition,
    ead_amortizing,
    herfindahl,
    load_portfolio,
)
from .recovery import (
    RecoveryParams,
    binormal_cdf,
    calibrate_recovery,
    conditional_lgd,
    conditional_moments,
    expected_lgd,
    kendall_tau,
    sample_recovery,
)
from .scenario import ScenarioSpec, load_scenario
