"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid experiment parameters (exit code 2)."""


class NumericalGuardError(RuntimeError):
    """A numerical guard tripped: overflow, empty sample, degenerate target (exit code 3)."""
