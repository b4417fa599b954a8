from ._network import (
    ArterialNetwork,
    FluidConstants,
    VesselSegment,
    WallModel,
    compute_stiffness,
    load_network,
    median_area_ratio,
    parse_network,
    serialize_network,
    solve_murray_exponent,
)
from ._structured_tree import (
    StructuredTree,
    StructuredTreeSpec,
    alpha_beta,
    impedance_kernel_time,
    root_impedance_spectrum,
    tree_depth_stats,
    vessel_length,
    vessel_radius,
    write_spectrum_csv,
)
from ._solver import (
    InletFlow,
    ParameterVector,
    PulseWaveSolver,
    SimulationOutput,
    SolverOptions,
    extract_observables,
    model_vector_to_observables,
    simulate,
    simulate_design,
    wall_pressure,
)
from ._emulator import (
    PcaGpEmulator,
    emulator_validation,
    fit_pca,
    flag_nonphysiological,
    lhs_design,
    load_emulator,
    matern52,
    predict,
    save_emulator,
    train_gp,
)
from ._calibration import (
    CalibrationTarget,
    DramOptions,
    NoiseModel,
    ObservationVector,
    PosteriorChain,
    calibrate,
    dram_sample,
    gaussian_prior,
    geweke_test,
    log_likelihood,
    log_prior,
    make_synthetic_observations,
    posterior_mean_prediction,
    propagate_uncertainty,
    summarize_chain,
    uniform_prior,
    update_noise,
)
from ._analysis import (
    compare_posteriors,
    correlation_report,
    flow_split,
    ks_test,
    mannwhitney_u,
    pearson,
    relative_change,
    severity_metrics,
    write_plot_data,
)
from ._config import RunConfig, load_run_config
from ._pipeline import preprocess_flows, run_pipeline
from ._exceptions import (
    ConfigHashMismatchError,
    DataValidationError,
    DegenerateChainError,
    MissingArtifactError,
    NetworkConfigError,
    NumericalError,
    PulmcalError,
    TrainingError,
    UnstableSimulationError,
    VesselCollapseError,
)

from ._version import __version__

__all__ = [
    "ArterialNetwork",
    "FluidConstants",
    "VesselSegment",
    "WallModel",
    "compute_stiffness",
    "load_network",
    "median_area_ratio",
    "parse_network",
    "serialize_network",
    "solve_murray_exponent",
    "StructuredTree",
    "StructuredTreeSpec",
    "alpha_beta",
    "impedance_kernel_time",
    "root_impedance_spectrum",
    "tree_depth_stats",
    "vessel_length",
    "vessel_radius",
    "write_spectrum_csv",
    "InletFlow",
    "ParameterVector",
    "PulseWaveSolver",
    "SimulationOutput",
    "SolverOptions",
    "extract_observables",
    "model_vector_to_observables",
    "simulate",
    "simulate_design",
    "wall_pressure",
    "PcaGpEmulator",
    "emulator_validation",
    "fit_pca",
    "flag_nonphysiological",
    "lhs_design",
    "load_emulator",
    "matern52",
    "predict",
    "save_emulator",
    "train_gp",
    "CalibrationTarget",
    "DramOptions",
    "NoiseModel",
    "ObservationVector",
    "PosteriorChain",
    "calibrate",
    "dram_sample",
    "gaussian_prior",
    "geweke_test",
    "log_likelihood",
    "log_prior",
    "make_synthetic_observations",
    "posterior_mean_prediction",
    "propagate_uncertainty",
    "summarize_chain",
    "uniform_prior",
    "update_noise",
    "compare_posteriors",
    "correlation_report",
    "flow_split",
    "ks_test",
    "mannwhitney_u",
    "pearson",
    "relative_change",
    "severity_metrics",
    "write_plot_data",
    "RunConfig",
    "load_run_config",
    "preprocess_flows",
    "run_pipeline",
    "ConfigHashMismatchError",
    "DataValidationError",
    "DegenerateChainError",
    "MissingArtifactError",
    "NetworkConfigError",
    "NumericalError",
    "PulmcalError",
    "TrainingError",
    "UnstableSimulationError",
    "VesselCollapseError",
    "__version__",
]
