"""Decoupled variational Gaussian-process regression.

Input arrays are shaped (N, D): one example per row.
"""

from ._core import (
    BasisSet,
    DecoupledModel,
    KernelHyper,
    LikelihoodKind,
    TraceEntry,
    TrainConfig,
    TrainResult,
    elbo,
    elbo_gradient,
    ell_gaussian,
    evaluate,
    init_hyper,
    kl_general,
    kl_normal_prior,
    load_csv,
    oracles,
    predict,
    run_cli,
    train,
)

__all__ = [
    "BasisSet",
    "DecoupledModel",
    "KernelHyper",
    "LikelihoodKind",
    "TraceEntry",
    "TrainConfig",
    "TrainResult",
    "elbo",
    "elbo_gradient",
    "ell_gaussian",
    "evaluate",
    "init_hyper",
    "kl_general",
    "kl_normal_prior",
    "load_csv",
    "oracles",
    "predict",
    "run_cli",
    "train",
]
