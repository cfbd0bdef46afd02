"""Exception hierarchy shared by every module of the package."""


class ElpgError(Exception):
    """Base class for all package errors."""


class ShapeError(ElpgError, ValueError):
    """Operand shapes do not conform to an operation's contraction/broadcast rule."""


class DomainError(ElpgError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(ElpgError, RuntimeError):
    """A caller violated a precondition (non-scalar loss, missing gradient, ...)."""


class OracleError(ElpgError, RuntimeError):
    """The finite-difference oracle could not produce a finite reference."""


class InputError(ElpgError, ValueError):
    """Invalid signal or argument supplied by the caller."""


class NormalizationError(DomainError):
    """Electrode-wise normalization hit an all-zero channel."""


class IsolatedNodeError(DomainError):
    """A graph node has zero degree and cannot be normalized."""


class ParcellationError(InputError):
    """A parcellation leaves a group empty or a channel unassigned."""


class ConfigError(ElpgError, ValueError):
    """An invalid training, cohort or run configuration."""


class StratificationError(ConfigError):
    """Subject-wise folds cannot be stratified with both classes present."""


class DegenerateTestError(ElpgError, ValueError):
    """A statistical test has no information (e.g. all paired differences zero)."""


class FormatError(ElpgError, ValueError):
    """A file does not carry the expected magic bytes or version."""


class LengthError(FormatError):
    """A binary payload is truncated or over-long."""


class SchemaError(FormatError):
    """A text file (manifest, layout, parcellation) violates its schema."""


class ValidationError(ElpgError, ValueError):
    """A manifest row references missing or unparsable data."""
