"""Mixed-norm multiple kernel learning: solvers, closed-form learning-theory
quantities, and a reproducible rate-scaling experiment harness."""

from .harness import (
    Cell,
    ExperimentPlan,
    InsufficientDataError,
    RateRecord,
    SlopeFit,
    fit_slope,
    grid_cv_lambda,
    mkl_predictor,
    plan_cells,
    plan_from_json,
    read_records_csv,
    run_cell,
    slope_band,
    summarize,
    sweep,
    write_records_csv,
)
from .kernels import (
    GaussianKernel,
    GramMatrix,
    KernelDomainError,
    PrecomputedKernel,
    SpectralKernel,
    SpectrumFitError,
    basis_matrix,
    cross_gram,
    estimate_decay,
    eval_kernel,
    gram,
    gram_eigh,
    gram_sqrt,
    kernel_from_json_dict,
    kernel_to_json_dict,
    load_gram_csv,
)
from .solver import (
    MklProblem,
    MklSolution,
    SolverOptions,
    UnsupportedFormulationError,
    mixed_norm_sq,
    objective_value,
    problem_from_json,
    solution_to_json_dict,
    solve,
    solve_direct,
    solve_theta_path,
    theta_update,
)
from .synth import (
    Dataset,
    L2Error,
    Truth,
    TruthSpec,
    build_truth,
    dataset_from_csv,
    dataset_to_csv,
    dense_spec,
    measure_l2_error,
    sample_dataset,
    sparse_spec,
    stable_seed,
    truth_from_json_dict,
    truth_spec_from_json,
    truth_to_json_dict,
)
from .theory import (
    DegenerateGramError,
    PackingBound,
    PackingSpaceError,
    RatePrediction,
    TheoryParams,
    entropy_bound,
    eta,
    greedy_packing,
    kappa_estimate,
    minimax_lower_bound,
    optimal_lambda,
    packing_lower_bound,
    predicted_rate,
    r_p_norm,
    sample_size_ok,
    u_n_bound,
    zeta_n,
)

__version__ = "0.1.0"

__all__ = [
    "Cell",
    "Dataset",
    "DegenerateGramError",
    "ExperimentPlan",
    "GaussianKernel",
    "GramMatrix",
    "InsufficientDataError",
    "KernelDomainError",
    "L2Error",
    "MklProblem",
    "MklSolution",
    "PackingBound",
    "PackingSpaceError",
    "PrecomputedKernel",
    "RatePrediction",
    "RateRecord",
    "SlopeFit",
    "SolverOptions",
    "SpectralKernel",
    "SpectrumFitError",
    "TheoryParams",
    "Truth",
    "TruthSpec",
    "UnsupportedFormulationError",
    "basis_matrix",
    "build_truth",
    "cross_gram",
    "dataset_from_csv",
    "dataset_to_csv",
    "dense_spec",
    "entropy_bound",
    "estimate_decay",
    "eta",
    "eval_kernel",
    "fit_slope",
    "gram",
    "gram_eigh",
    "gram_sqrt",
    "greedy_packing",
    "grid_cv_lambda",
    "kappa_estimate",
    "kernel_from_json_dict",
    "kernel_to_json_dict",
    "load_gram_csv",
    "measure_l2_error",
    "minimax_lower_bound",
    "mixed_norm_sq",
    "mkl_predictor",
    "objective_value",
    "optimal_lambda",
    "packing_lower_bound",
    "plan_cells",
    "plan_from_json",
    "predicted_rate",
    "problem_from_json",
    "r_p_norm",
    "read_records_csv",
    "run_cell",
    "sample_dataset",
    "sample_size_ok",
    "slope_band",
    "solution_to_json_dict",
    "solve",
    "solve_direct",
    "solve_theta_path",
    "sparse_spec",
    "stable_seed",
    "summarize",
    "sweep",
    "theta_update",
    "truth_from_json_dict",
    "truth_spec_from_json",
    "truth_to_json_dict",
    "u_n_bound",
    "write_records_csv",
    "zeta_n",
]
