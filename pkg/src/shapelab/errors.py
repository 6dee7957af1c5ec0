"""Exception types shared across the package."""


class ShapelabError(Exception):
    """Base class for all package errors."""


class ContractError(ShapelabError, ValueError):
    """A caller violated an operation's precondition."""


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of the operation."""


class CompositionError(ContractError):
    """A sequence does not have the composition its codec expects."""


class OutOfImageError(ContractError):
    """A sequence is a valid permutation but is never produced by the matcher."""


class NumericError(ShapelabError, ArithmeticError):
    """An iterative numerical method failed to converge."""


class ConfigError(ShapelabError, ValueError):
    """Invalid experiment or link configuration."""
