"""Optimal condition-based maintenance for systems hit by compound Poisson shocks."""

from .model import (
    ExponentialAversionUtility,
    ExponentialShocks,
    Grid,
    LognormalShocks,
    ModelSpec,
    QuadraticCost,
    TabulatedCost,
    TabulatedShocks,
    TabulatedUtility,
    build_grid,
    discretize_shock_density,
    evaluate_cost,
    evaluate_utility,
)
from .solver import Policy, ResidualReport, ValueFunction, extract_policy, qvi_residuals, solve

__all__ = [
    "ExponentialAversionUtility",
    "ExponentialShocks",
    "Grid",
    "LognormalShocks",
    "ModelSpec",
    "Policy",
    "QuadraticCost",
    "ResidualReport",
    "TabulatedCost",
    "TabulatedShocks",
    "TabulatedUtility",
    "ValueFunction",
    "build_grid",
    "discretize_shock_density",
    "evaluate_cost",
    "evaluate_utility",
    "extract_policy",
    "qvi_residuals",
    "solve",
]
