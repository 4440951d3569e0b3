"""Selective inference for Gaussian graphical models after randomised graphical-lasso selection."""

from .errors import SelgraphError
from .inference import TargetSpec, infer
from .pipeline import fit_selective
from .solver import PenaltySpec, RandomizationSpec, half_universal_lambda, universal_lambda

__all__ = [
    "PenaltySpec",
    "RandomizationSpec",
    "SelgraphError",
    "TargetSpec",
    "fit_selective",
    "half_universal_lambda",
    "infer",
    "universal_lambda",
]
__version__ = "0.1.0"
