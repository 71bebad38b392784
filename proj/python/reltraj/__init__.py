"""Trajectory prediction with latent-density OOD detection and error regression."""

from ._core import (
    CommandError,
    GaussianMixture,
    ade,
    auroc,
    cnll,
    evaluate,
    fde,
    fit_gmm,
    fit_reliability,
    generate,
    min_ade,
    mixture_nll,
    nll_proxy,
    r_auc,
    resolved_config,
    retention_curve,
    run_all,
    run_dir,
    train,
    wade,
)

__all__ = [
    "CommandError",
    "GaussianMixture",
    "ade",
    "auroc",
    "cnll",
    "evaluate",
    "fde",
    "fit_gmm",
    "fit_reliability",
    "generate",
    "min_ade",
    "mixture_nll",
    "nll_proxy",
    "r_auc",
    "resolved_config",
    "retention_curve",
    "run_all",
    "run_dir",
    "train",
    "wade",
]
