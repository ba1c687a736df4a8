"""Stochastic trajectory simulation of open quantum systems.

A small numpy/numba package that integrates linear stochastic
Schrodinger-type trajectories driven by colored complex Gaussian noise,
synthesizes that noise from discrete bosonic bath models or tabulated
correlation kernels, and verifies (per realization and in ensemble) that
trajectory averages reconstruct the exact reduced density operator.
"""

__version__ = "0.1.0"

from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    average_density,
    convergence_report,
    run_ensemble,
)
from .model import (
    BathMode,
    BathModel,
    KernelGrid,
    SystemModel,
    build_total_hamiltonian,
    kernel_alpha,
    markov_reference_bath,
    recurrence_time,
    tabulate_kernel,
)
from .noise import (
    NoiseRealization,
    RngStream,
    sample_grid_factorization,
    sample_mode_sum_T0,
    sample_thermal_mode_sum,
    validate_statistics,
)
from .numerics import (
    SpaceLayout,
    TimeGrid,
    partial_trace_env,
    tensor_product,
    trace_distance,
)
from .oracle import (
    CoherentSample,
    TotalState,
    bargmann_project,
    bargmann_project_series,
    dephasing_reference,
    lindblad_solve,
    propagate_total,
    reduced_density,
    sample_thermal_initial,
    thermal_reduced_dynamics,
)
from .solver import (
    MemoryClosure,
    TrajectoryState,
    closure_bargmann,
    closure_born,
    closure_dephasing,
    memory_integral,
    memory_integral_cumulative,
    run_trajectory,
    run_trajectory_batch,
)

__all__ = [
    "BathMode", "BathModel", "CoherentSample", "EnsembleConfig",
    "EnsembleResult", "KernelGrid", "MemoryClosure", "NoiseRealization",
    "RngStream", "SpaceLayout", "SystemModel", "TimeGrid", "TotalState",
    "TrajectoryState", "average_density", "bargmann_project",
    "bargmann_project_series", "build_total_hamiltonian", "closure_bargmann",
    "closure_born", "closure_dephasing", "convergence_report",
    "dephasing_reference", "kernel_alpha", "lindblad_solve",
    "markov_reference_bath", "memory_integral", "memory_integral_cumulative",
    "partial_trace_env", "propagate_total", "recurrence_time",
    "reduced_density", "run_ensemble", "run_trajectory",
    "run_trajectory_batch", "sample_grid_factorization", "sample_mode_sum_T0",
    "sample_thermal_initial", "sample_thermal_mode_sum", "tabulate_kernel",
    "tensor_product", "thermal_reduced_dynamics", "trace_distance",
    "validate_statistics",
]
