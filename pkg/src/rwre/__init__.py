"""Non-parametric estimation of the environment law of a one-dimensional
random walk in random environment, from a single trajectory.

The pipeline: record the left-step counts of a nearest-neighbour walk run
to site n (`walk`), turn them into unbiased moment and cdf estimates of
the site law (`estimators`), pick the grid resolution data-adaptively
(`lepskii`), and replicate the canned simulation studies (`experiments`).
"""

from .env import (
    Beta,
    DiscreteMixture,
    EnvSpec,
    KappaBracketError,
    Regime,
    UniformInterval,
    env_spec_from_json,
    exact_cdf,
    exact_moment,
    holder_constant,
    solve_kappa,
    target_cdf_grid,
)
from .estimators import (
    CdfEstimate,
    MomentEstimate,
    conditional_cdf_oracle,
    conditional_moment_oracle,
    deviation_bound,
    estimate_cdf,
    estimate_cdf_sweep,
    estimate_moment,
    phi,
    psi,
    read_cdf_csv,
    sup_loss,
    write_cdf_csv,
)
from .experiments import (
    ExperimentConfig,
    FigureBundle,
    PRESETS,
    RiskTable,
    resolve_engine,
    run_figure_dataset,
    run_risk_experiment,
    simulate_zpath,
    theoretical_slope,
    verify_clt,
    verify_concentration,
    verify_occupation,
)
from .lepskii import (
    LepskiiResult,
    adaptive_estimate,
    lepskii_result_from_json,
    lepskii_result_to_json,
    radius,
    select,
)
from .walk import (
    DEFAULT_MAX_STEPS,
    DegenerateDataError,
    Environment,
    KernelTailError,
    MaxStepsExceeded,
    RegimeError,
    StateOverflowError,
    ZPath,
    batch_z_annealed,
    batch_z_quenched,
    derive_seed,
    invariant_tail,
    kernel_row,
    read_zpath_bin,
    read_zpath_csv,
    sample_environment,
    simulate_walk,
    simulate_z_branching,
    write_zpath_bin,
    write_zpath_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Beta",
    "CdfEstimate",
    "DEFAULT_MAX_STEPS",
    "DegenerateDataError",
    "DiscreteMixture",
    "EnvSpec",
    "Environment",
    "ExperimentConfig",
    "FigureBundle",
    "KappaBracketError",
    "KernelTailError",
    "LepskiiResult",
    "MaxStepsExceeded",
    "MomentEstimate",
    "PRESETS",
    "Regime",
    "RegimeError",
    "RiskTable",
    "StateOverflowError",
    "UniformInterval",
    "ZPath",
    "adaptive_estimate",
    "batch_z_annealed",
    "batch_z_quenched",
    "conditional_cdf_oracle",
    "conditional_moment_oracle",
    "derive_seed",
    "deviation_bound",
    "env_spec_from_json",
    "estimate_cdf",
    "estimate_cdf_sweep",
    "estimate_moment",
    "exact_cdf",
    "exact_moment",
    "holder_constant",
    "invariant_tail",
    "kernel_row",
    "lepskii_result_from_json",
    "lepskii_result_to_json",
    "phi",
    "psi",
    "radius",
    "read_cdf_csv",
    "read_zpath_bin",
    "read_zpath_csv",
    "resolve_engine",
    "run_figure_dataset",
    "run_risk_experiment",
    "sample_environment",
    "select",
    "simulate_walk",
    "simulate_z_branching",
    "simulate_zpath",
    "solve_kappa",
    "sup_loss",
    "target_cdf_grid",
    "theoretical_slope",
    "verify_clt",
    "verify_concentration",
    "verify_occupation",
    "write_cdf_csv",
    "write_zpath_bin",
    "write_zpath_csv",
]
