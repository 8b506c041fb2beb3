"""Continuation, bifurcation tracking and basin analysis of a Duffing
oscillator with a nonlinear tuned vibration absorber."""
from .model import (
    TABLE1,
    DimensionlessParams,
    Forcing,
    State,
    SystemParams,
    table1_params,
    to_dimensionless,
    tune_dimensionless,
    tune_linear,
    tune_nonlinear,
)

__all__ = [
    "TABLE1",
    "DimensionlessParams",
    "Forcing",
    "State",
    "SystemParams",
    "table1_params",
    "to_dimensionless",
    "tune_dimensionless",
    "tune_linear",
    "tune_nonlinear",
]
