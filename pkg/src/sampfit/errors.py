class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Training diverged or produced non-finite values (CLI exit code 3)."""


class SimulationError(RuntimeError):
    """The CPI state machine reached a state no rule covers."""
