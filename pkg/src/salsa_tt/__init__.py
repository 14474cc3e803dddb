"""Tensor-train completion with stabilized, rank-adaptive ALS.

Public surface: the TT representation algebra (salsa_tt.tt), sampling-set
handling (salsa_tt.sampling), the per-slice micro-steps (salsa_tt.microstep),
rank adaption (salsa_tt.rank_control), the solvers (salsa_tt.solvers) and
the benchmark targets/harness (salsa_tt.testbed).
"""

__version__ = "0.1.0"

from .tt import (
    TTTensor,
    GaugeState,
    evaluate,
    evaluate_at,
    full_contract,
    frobenius_norm,
    orthogonalize,
    standard_representation,
    truncate,
    constant_tensor,
    random_tt,
    save_tt,
    load_tt,
)
from .sampling import (
    SampleSet,
    generate_quasi_random,
    split_control,
    attach_values,
    residual_on_set,
    save_samples,
    load_samples,
)
from .microstep import (
    RegularizationWeights,
    LocalSystem,
    zeta_constants,
    matrix_zeta,
    filter_matrix,
    build_local_system,
    solve_slice,
    itrip_check,
)
from .rank_control import (
    FilterState,
    OmegaSchedule,
    ProgressTracker,
    minimal_filter_values,
    classify_spectrum,
    update_omega,
    sigma_min_fixpoint,
    unblocked_ranks,
    increase_rank,
    decrease_rank,
    check_termination,
    filter_fixpoints,
)
from .solvers import (
    SolverConfig,
    SolveResult,
    salsa_sweep,
    salsa_solve,
    als_solve,
    greedy_als_solve,
    matrix_salsa,
    greedy_rank_estimate,
    stable_matrix_update,
)
from .testbed import (
    ExperimentSpec,
    domino_value,
    domino_target,
    generic_value,
    generic_target,
    random_tt_uniform_spectrum,
    rank_adaption_tensor,
    run_experiment,
)
