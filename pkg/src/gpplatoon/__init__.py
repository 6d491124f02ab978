"""GP-corrected human-driver modeling and chance-constrained MPC for mixed platoons."""

__version__ = "0.1.0"

from .gp import (
    Dataset,
    GpModel,
    IllConditionedKernelError,
    KernelHyper,
    SparseGpModel,
    SparseOpts,
    TrainOpts,
    build_sparse,
    kernel_eval,
    load_model,
    log_marginal_likelihood,
    normal_quantile,
    predict_exact,
    predict_sparse,
    save_model,
    train_exact,
)
from .hv import (
    ArxParams,
    DriverTrace,
    VelocityHistory,
    arx_predict,
    build_discrepancy_dataset,
    default_disturbance,
    fit_hv_correction,
    generate_synthetic_trace,
    predict_corrected,
    rmse,
)
from .dynamics import (
    AvState,
    GapConstraintParams,
    av_step,
    propagate_hv_mean,
    propagate_hv_variance,
    tightened_min_gap,
)
from .qp import QuadraticProgram, QpSolution, solve_qp
