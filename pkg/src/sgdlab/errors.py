"""Exception types shared across the lab. The CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit code 2)."""


class NumericalError(ArithmeticError):
    """Numeric failure: overflow, non-finite values, singular systems (exit code 3)."""


class ConvergenceError(RuntimeError):
    """An iterative procedure did not reach its tolerance (exit code 4)."""
