"""Exception hierarchy shared across the package.

Validation problems (bad arguments, unsupported model/experiment pairs) and
numerical problems (failed brackets, quadrature, convergence) are kept apart
so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class PamlabError(Exception):
    """Base class for all package errors."""


class ValidationError(PamlabError):
    """Invalid arguments or an unsupported model/operation combination."""


class NumericalError(PamlabError):
    """A numerical procedure failed to meet its contract."""


class BracketError(NumericalError):
    """A root bracket could not be established on the scanned interval."""

    def __init__(self, message, scan_points=None, scan_values=None):
        super().__init__(message)
        self.scan_points = scan_points
        self.scan_values = scan_values


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge; carries the achieved bound."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class EscapeMassError(NumericalError):
    """A truncation box is too small for the requested accuracy."""

    def __init__(self, message, escape_mass=None):
        super().__init__(message)
        self.escape_mass = escape_mass
