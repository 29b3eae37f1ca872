"""Exception hierarchy shared by all kuht modules."""


class KuhtError(Exception):
    """Base class for library errors."""


class InvalidInputError(KuhtError, ValueError):
    """Argument has the wrong shape, range or type."""


class DegenerateSampleError(InvalidInputError):
    """Sample carries no usable spread (e.g. all points identical)."""


class UnsupportedKernelError(KuhtError, TypeError):
    """Operation is not defined for this kernel variant."""


class UnsupportedModelError(KuhtError, TypeError):
    """Operation is not defined for this model variant."""


class NoClosedFormError(UnsupportedModelError):
    """No closed-form kernel embedding exists for this (model, kernel) pair."""


class TooLargeError(KuhtError):
    """An enumeration would exceed the configured size guard."""


class InternalConsistencyError(KuhtError, ArithmeticError):
    """A quantity that must be nonnegative came out clearly negative."""


class QuadratureError(KuhtError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class SupportError(KuhtError, ValueError):
    """Data fall outside the support of a model."""


class InsufficientDataError(KuhtError, ValueError):
    """Too few usable rows to fit an exponent."""
