"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, spec, or plan (user input is wrong)."""


class FormatError(ValueError):
    """On-disk file is malformed, truncated, or of the wrong version."""


class ConsistencyError(ValueError):
    """Runtime objects disagree (plane sets, class ids, shapes)."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required."""
