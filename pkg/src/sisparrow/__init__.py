"""Gridless 2D direction-of-arrival estimation for partly calibrated
rectangular arrays: shift-invariant covariance fitting with ADMM / SCA
solvers, multi-invariance 2D ESPRIT and MUSIC recovery, stochastic
Cramér-Rao bounds, and a Monte-Carlo benchmark harness."""

from .geometry import (
    ArrayGeometry,
    SelectionGroups,
    ShiftStructure,
    build_shift_structure,
    full_hermitian_structure,
    selection_groups,
    steering_matrix,
    steering_vector,
    structure_from_groups,
)
from .simulate import (
    MeasurementSet,
    SourceScenario,
    default_loading,
    diagonal_load,
    sample_covariance,
    simulate,
    snr_db_to_noise_var,
)
from .solvers import (
    NotPositiveDefinite,
    Objective,
    SolverConfig,
    SolverReport,
    gradient,
    inner_sca_q_update,
    lambda_auto,
    objective_value,
    partial_grad_hess,
    psd_project,
    psd_sqrt,
    solve_admm,
    solve_sca,
)
from .recovery import (
    FrequencyEstimate,
    InsufficientAperture,
    RmseResult,
    joint_diagonalize,
    match_and_rmse,
    mi_md_esprit,
    music_2d,
    signal_subspace,
    wrap_distance,
)
from .crb import CrbResult, derivative_blocks, stochastic_crb
from . import kernels

__version__ = "0.1.0"
