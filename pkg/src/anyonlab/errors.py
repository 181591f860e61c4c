"""Exception types shared across the package.

Numerical-validation errors derive from :class:`ValidationError` so callers
(and the CLI) can distinguish "your inputs violate an invariant" from plain
programming errors.
"""

from __future__ import annotations


class AnyonlabError(Exception):
    """Base class for all package errors."""


class ValidationError(AnyonlabError):
    """An input failed a numerical or structural invariant."""


class NotSquare(ValidationError):
    """Matrix is not square."""


class NotNormal(ValidationError):
    """Matrix does not commute with its adjoint within tolerance."""


class NotUnitary(ValidationError):
    """Matrix is not unitary within tolerance."""


class ConvergenceFailure(AnyonlabError):
    """The iterative eigensolver did not converge."""


class DimensionMismatch(ValidationError):
    """Operands have incompatible dimensions."""


class SizeOverflow(ValidationError):
    """A result would exceed the configured dimension cap."""


class InvalidApparatus(ValidationError):
    """Interferometer coefficients are inconsistent."""


class NotUnitModulus(ValidationError):
    """A phase factor does not lie on the unit circle."""


class ExpectationOutOfDisk(ValidationError):
    """A monodromy expectation value lies outside the closed unit disk."""


class IndexOutOfRange(ValidationError):
    """A braid index does not address an adjacent pair of the system."""


class MissingBraidMatrix(ValidationError):
    """No braid matrix is registered for the species pair."""


class ZeroNormComponent(AnyonlabError):
    """Conditioning on an outcome whose probability is zero."""


class ZeroLikelihood(ValidationError):
    """A branch assigns probability zero to an outcome another branch allows."""


class ConfigError(AnyonlabError):
    """An experiment configuration failed to parse or validate."""
