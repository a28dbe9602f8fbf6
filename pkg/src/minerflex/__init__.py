"""Profit-maximizing ancillary-service capacity profiles for mining fleets."""

from .deployment import (
    Allocation,
    DeploymentSample,
    Profile,
    allocate_deployment,
    cost_fixed_k,
    critical_type,
    effective_epsilon,
    realized_cost,
)
from .errors import (
    InfeasibleError,
    InvalidInputError,
    MinerflexError,
    ModelViolationError,
    NumericalError,
    TraceFormatError,
)
from .fleet import (
    FleetSpec,
    MachineType,
    canonicalize,
    fleet_from_rewards,
    load_fleet_config,
    mining_revenue_rate,
    net_reward,
)
from .online import (
    OgdConfig,
    RegretReport,
    RoundOutcome,
    hindsight_optimum,
    ogd_step,
    regret_bound,
    run_online,
)
from .oracle import (
    GridMcResult,
    GridSpec,
    StrategyReport,
    compare_strategies,
    grid_mc_optimum,
    lp_deployment_oracle,
)
from .programs import BernoulliEps, ConstantEps, ProgramSpec, UniformEps, independent_sampler
from .regulation import (
    RegInstance,
    RegJointModel,
    TruncatedExponential,
    expected_reg_cost,
    fit_lambda,
    sample_joint,
    solve_reg_profile,
    truncexp_mean,
    truncexp_pdf,
)
from .sgd import (
    SgdConfig,
    SgdResult,
    project_feasible,
    sample_subgradient,
    solve,
    step_size,
    suboptimality_bound,
)
from .single_machine import ProgramStats, RiskConfig, best_program, profile_risk, risk_aware_solve
from .traces import (
    PriceResponsiveModel,
    SynthesisSpec,
    TraceRecord,
    estimate_stats,
    load_synthesis_spec,
    load_traces,
    per_slot_rewards,
    price_responsive_eps,
    synthesize_traces,
    write_traces,
)

__version__ = "0.1.0"
