"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Malformed or inconsistent problem configuration."""


class CurvatureError(RuntimeError):
    """Convexity in the minimizing slot or concavity in the maximizing slot
    failed the numerical check; the saddle problem is not well posed."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class BlowUpError(RuntimeError):
    """Backward integration left the guard region."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class NumericsError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""
