"""Copula-based generalized additive models with sample selection."""

from .copulas import Copula, kendall_tau, tau_to_theta
from .heckman import gaussian_fiml, two_step
from .likelihood import SelectionLikelihood, cov_identity_check, gradient, hessian, loglik, selection_bias
from .margins import GammaMargin, GaussianMargin, make_margin
from .model import DataError, Dataset, EquationSpec, ModelSpec, Term
from .optimizer import FittedModel, fit
from .simulate import DGPSpec, MCReport, generate, mc_study
from .splines import bspline_basis, build_design

__version__ = "0.1.0"

__all__ = [
    "Copula", "kendall_tau", "tau_to_theta",
    "gaussian_fiml", "two_step",
    "SelectionLikelihood", "cov_identity_check", "gradient", "hessian", "loglik", "selection_bias",
    "GammaMargin", "GaussianMargin", "make_margin",
    "DataError", "Dataset", "EquationSpec", "ModelSpec", "Term",
    "FittedModel", "fit",
    "DGPSpec", "MCReport", "generate", "mc_study",
    "bspline_basis", "build_design",
]
