"""Absorption-time distributions with piecewise-constant transition rates:
EM fitting, evaluation, simulation and phase-type approximation."""

from .em import ConditionalStats, EMConfig, FitResult, WeightedSample, estep, fit, loglik, mstep
from .model import ConditionalLaw, Grid, IPHModel, load_model, save_model, validate
from .ph_approx import PHApproximation, approx_density, choose_m, min_valid_n
from .poisson_glm import RegressionSpec, ThetaEstimate
from .simulate import SamplePath, SufficientStats, path_statistics, sample_absorptions, sample_path

__all__ = [
    "ConditionalLaw",
    "ConditionalStats",
    "EMConfig",
    "FitResult",
    "Grid",
    "IPHModel",
    "PHApproximation",
    "RegressionSpec",
    "SamplePath",
    "SufficientStats",
    "ThetaEstimate",
    "WeightedSample",
    "approx_density",
    "choose_m",
    "estep",
    "fit",
    "load_model",
    "loglik",
    "min_valid_n",
    "mstep",
    "path_statistics",
    "sample_absorptions",
    "sample_path",
    "save_model",
    "validate",
]

__version__ = "0.1.0"
