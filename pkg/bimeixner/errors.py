"""Exception hierarchy shared by every module of the package."""

import numpy as np


class BiMeixnerError(Exception):
    """Base class for all errors raised by bimeixner."""


class DomainError(BiMeixnerError, ValueError):
    """A tilt parameter lies outside (or on the boundary of) the open domain."""


class ArgumentError(BiMeixnerError, ValueError):
    """An argument violates an operation's precondition."""


class NumericalError(BiMeixnerError, ArithmeticError):
    """A numerical routine could not deliver the requested accuracy."""


class IntegrationError(NumericalError):
    """Adaptive quadrature ran out of subdivisions before converging."""


class TabulationError(NumericalError):
    """A density handed to the inverse-CDF tabulator does not carry unit mass."""


class GridError(BiMeixnerError, KeyError):
    """A requested time is not a point of the batch's time grid."""

    def __str__(self):
        # KeyError quotes its argument; keep the plain message instead
        return str(self.args[0]) if self.args else ""


class SingularDesignError(BiMeixnerError, np.linalg.LinAlgError):
    """A regression design matrix is numerically singular."""
