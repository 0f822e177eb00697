"""Typed failures.  Each family maps to one CLI exit code."""


class EVLabError(Exception):
    exit_code = 1


class ConfigError(EVLabError):
    """Malformed or out-of-range configuration / input file."""

    exit_code = 2


class IntegrityError(ConfigError):
    """Input file failed its checksum or schema check."""


class PhysicsError(EVLabError):
    """The requested configuration is physically inadmissible."""

    exit_code = 3


class NoCompactSupportError(PhysicsError):
    pass


class AdmissibilityError(PhysicsError):
    """``2 gamma m(r)/r`` reached 1 (horizon) or the margin fell below the floor."""


class SupportLeakageError(PhysicsError):
    """A perturbation has mass outside the steady-state support."""


class SingularRadiusError(ValueError):
    """An ``L``-dependent weight was requested at ``r = 0``."""


class NumericalToleranceError(EVLabError):
    exit_code = 4


class StepSizeError(NumericalToleranceError):
    """Inner fixed-point iteration failed to contract at the requested step."""
