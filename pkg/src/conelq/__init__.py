"""conelq: cone-constrained zero-sum LQ jump-diffusion games at desk scale.

Solves the coupled backward Riccati system whose drivers carry
cone-constrained saddle values, extracts the feedback saddle law, simulates
the controlled state, and verifies the value formula, saddle inequalities,
and related identities by Monte Carlo.
"""

__version__ = "0.1.0"

from .errors import BlowUpError, ConfigError, ConvergenceError, CurvatureError, NumericsError
from .model import (
    AssumptionReport,
    CoefficientSet,
    Cone,
    InitialLaw,
    JumpMeasure,
    TimeGrid,
    cone_contains,
    cone_project,
    validate_coefficients,
)

__all__ = [
    "__version__",
    "AssumptionReport",
    "CoefficientSet",
    "Cone",
    "InitialLaw",
    "JumpMeasure",
    "TimeGrid",
    "cone_contains",
    "cone_project",
    "validate_coefficients",
    "BlowUpError",
    "ConfigError",
    "ConvergenceError",
    "CurvatureError",
    "NumericsError",
]
