"""Exception hierarchy for tapermode.

Every error raised by the package derives from :class:`TapermodeError`, so
callers can catch one type. The three subclasses separate the failure domains
that map onto distinct CLI exit codes: invalid input, numerical solvers, and
spectrum fitting.
"""


class TapermodeError(Exception):
    """Base class for all tapermode errors."""


class ConfigError(TapermodeError):
    """Invalid trap configuration or malformed input (CLI exit code 2)."""


class SolverError(TapermodeError):
    """Equilibrium, eigenvalue, or mode-tracking failure (CLI exit code 3)."""


class SimulationError(TapermodeError):
    """Time integration diverged or was mis-parameterized (CLI exit code 3)."""


class AnalysisError(TapermodeError):
    """Spectrum or profile fit could not be performed (CLI exit code 4)."""
