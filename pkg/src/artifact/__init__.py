"""Portfolio allocation, risk measurement and risk budgeting."""

from .core import (
    AssetUniverse,
    CovarianceMatrix,
    Portfolio,
    RiskBudget,
    RiskDecomposition,
    ValidationError,
    build_covariance,
    portfolio_moments,
)

__version__ = "0.1.0"

__all__ = [
    "AssetUniverse",
    "CovarianceMatrix",
    "Portfolio",
    "RiskBudget",
    "RiskDecomposition",
    "ValidationError",
    "build_covariance",
    "portfolio_moments",
]
