"""Message passing under Gaussian variance profiles.

Sampling of profile-weighted Gaussian ensembles, the symmetric and
asymmetric iterations with their leave-out variants and correction-vector
policies, the per-coordinate state-evolution law, trace diagnostics,
the ridge fixed-point theory, and a seeded Monte Carlo harness.
"""

__version__ = "0.1.0"

from .amp import (
    AmpTrajectory,
    AsymmetricAmpTrajectory,
    DataDriven,
    MonteCarloOracle,
    StateEvolution,
    Supplied,
    asym_to_sym_embed,
    compare_onsager_modes,
    leave_one_out_error_profile,
    loo_representation_error,
    run_asymmetric,
    run_leave_out,
    run_symmetric,
)
from .ensembles import (
    MaskMode,
    MatrixScale,
    ProfileKind,
    SampledMatrix,
    VarianceProfile,
    block_profile,
    constant_profile,
    iid_abs_gaussian_profile,
    mask_leave_out,
    profile_from_csv,
    sample_rectangular,
    sample_symmetric,
)
from .nonlinearity import (
    Affine,
    CoordinateBlocks,
    Identity,
    NonlinearityFamily,
    NonlinearitySchedule,
    RidgeProxAffine,
    ScaledTanh,
    SmoothSoftThreshold,
    Zero,
    check_lipschitz,
)
from .ridge import (
    RidgeFixedPoint,
    RidgeProblem,
    amp_ridge_run,
    dR_metric,
    phi_map,
    psi_map,
    residual_moments,
    ridge_closed_form,
    seq_moments,
    solve_b,
    solve_fixed_point,
    solve_gamma,
    theory_l2_error,
)
from .state_evolution import (
    QuadratureRule,
    SePath,
    gaussian_expectation_2d,
    sample_se_sequence,
    se_asymmetric,
    se_onsager,
    se_symmetric,
    sigma_star,
)
from .trace_diag import m_recursion, n_recursion, trace_decay_test
