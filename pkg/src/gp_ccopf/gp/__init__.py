"""Gaussian-process regression: SE-ARD kernel, likelihood training and prediction."""

from gp_ccopf.gp.kernel import KernelParams, kernel_eval, kernel_matrix, nll
from gp_ccopf.gp.model import FitOptions, GpModel, MultiGpModel, fit, fit_multi

__all__ = [
    "FitOptions",
    "GpModel",
    "KernelParams",
    "MultiGpModel",
    "fit",
    "fit_multi",
    "kernel_eval",
    "kernel_matrix",
    "nll",
]
