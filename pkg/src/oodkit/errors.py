"""Exception types shared across the toolkit.

The CLI maps these onto exit codes (usage/config -> 1, file format -> 2,
numerical failure -> 3), so library code should raise the most specific
class that applies.
"""


class OodKitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(OodKitError):
    """Array shapes are incompatible for the requested operation."""


class DomainError(OodKitError):
    """An argument is outside the mathematically valid domain."""


class ConfigError(OodKitError):
    """A configuration value violates its documented constraints."""


class FormatError(OodKitError):
    """A file does not conform to its documented schema."""


class ContractViolation(OodKitError):
    """A documented API precondition was broken by the caller."""


class NumericalError(OodKitError):
    """A numerical computation produced an unusable result (NaN/Inf/singular)."""
