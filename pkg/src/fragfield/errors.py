"""Shared exception taxonomy.

Exit-code mapping used by the CLI: input/config problems -> 2,
numerical failures -> 3.
"""


class FragfieldError(Exception):
    """Base class for all library errors."""


class InvalidInputError(FragfieldError):
    """Malformed or out-of-contract input (CLI exit code 2)."""


class DomainError(InvalidInputError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(InvalidInputError):
    """Configuration file violates the schema."""


class InfeasibleMomentsError(InvalidInputError):
    """(m, zeta) pair outside the feasible region zeta < m(1-m)."""


class DegenerateSurrogateError(InvalidInputError):
    """Moment pair with zeta = 0 cannot be represented as a Beta."""


class UndefinedScoreError(InvalidInputError):
    """Score requested for an all-zero confusion triple."""


class InfeasibleSeparationError(InvalidInputError):
    """Ordinal separations cannot fit inside the clip interval."""


class NumericalFailureError(FragfieldError):
    """Linear algebra or quadrature failed beyond recovery (CLI exit code 3)."""
