"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numerical 4),
so library code should raise the most specific class that applies.
"""


class MVIError(Exception):
    """Base class for package-specific failures."""


class ConfigError(MVIError):
    """Invalid user-supplied configuration (bad flag value, malformed config file)."""


class DataError(MVIError):
    """Unreadable or inconsistent dataset input."""


class NumericalError(MVIError):
    """Numerical breakdown: non-finite objective, indefinite curvature, singular root."""
