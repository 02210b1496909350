"""Exception hierarchy.

Input-side failures (bad values, malformed files, grid mismatches) derive from
InputError; failures of the numerical machinery itself (degenerate designs,
non-positive-definite covariances, search blow-ups) derive from NumericalError.
The CLI maps the two branches to distinct exit codes.
"""


class SpecidError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SpecidError):
    """Invalid argument values or inconsistent inputs."""


class ParseError(InputError):
    """A file could not be parsed (bad header, non-numeric cell, ...)."""


class AlignmentError(InputError):
    """Spectra defined on incompatible wavelength grids."""


class BoundsError(InputError):
    """A pixel coordinate outside the image cube."""


class NumericalError(SpecidError):
    """A numerical operation failed (degenerate design, bad covariance)."""


class SearchError(NumericalError):
    """Model search could not run or exceeded its enumeration budget."""
