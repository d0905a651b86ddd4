"""Differentiable fixed-operator expression trees for symbolic regression."""

from .ops import OpKind, OVERFLOW_CAP, eval_op, grad_op
from .expr import Expr, parse, to_string, evaluate
from .arch import (
    ArchitectureSpec,
    Family,
    build_architecture,
    enumerate_expressible,
    harden,
    one_hot_params,
    soft_forward,
)
from .diff import leaf_grad_ratio, loss_and_grad
from .targets import (
    Dataset,
    GridSpec,
    Shape,
    TargetSpec,
    catalog,
    get_target,
    instantiate,
    make_dataset,
)
from .train import (
    GradientTrace,
    InitStrategy,
    TrainConfig,
    TrialResult,
    init_params,
    run_trial,
    tau_schedule,
)
from .analysis import (
    RateSummary,
    RecoveryVerdict,
    clopper_pearson,
    exact_recovery,
    fisher_exact,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "OpKind", "OVERFLOW_CAP", "eval_op", "grad_op",
    "Expr", "parse", "to_string", "evaluate",
    "ArchitectureSpec", "Family", "build_architecture", "enumerate_expressible",
    "harden", "one_hot_params", "soft_forward",
    "leaf_grad_ratio", "loss_and_grad",
    "Dataset", "GridSpec", "Shape", "TargetSpec", "catalog", "get_target",
    "instantiate", "make_dataset",
    "GradientTrace", "InitStrategy", "TrainConfig", "TrialResult",
    "init_params", "run_trial", "tau_schedule",
    "RateSummary", "RecoveryVerdict", "clopper_pearson", "exact_recovery",
    "fisher_exact", "summarize",
]
