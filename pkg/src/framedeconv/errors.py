"""Exception hierarchy shared by all modules."""


class FrameDeconvError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FrameDeconvError, ValueError):
    """Array shapes, lengths or channel counts are incompatible."""


class ParameterError(FrameDeconvError, ValueError):
    """A scalar parameter is outside its admissible range."""


class NotAFrameError(FrameDeconvError):
    """The MIMO filter is not left invertible on the frequency grid.

    ``bin`` holds the index of the offending frequency bin (a tuple for
    multidimensional grids) when it is known.
    """

    def __init__(self, message, bin=None):
        super().__init__(message)
        self.bin = bin


class ConstructionError(FrameDeconvError):
    """A transform could not be built from the supplied coefficients."""


class CompositionUnsupportedError(FrameDeconvError):
    """``L L^*`` is not a multiple of the identity."""


class PreconditionerError(FrameDeconvError):
    """A per-frequency matrix is numerically singular."""

    def __init__(self, message, bin=None):
        super().__init__(message)
        self.bin = bin


class StalePreconditionerError(FrameDeconvError):
    """The weights used to build a preconditioner no longer match the problem."""


class SolverError(FrameDeconvError):
    """The iterations produced non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OracleTooLargeError(FrameDeconvError):
    """Dense assembly was requested for a problem above the size guard."""


class DomainError(FrameDeconvError, ValueError):
    """Input values lie outside the domain required by a noise model."""


class ValidationError(FrameDeconvError, ValueError):
    """An observation or configuration failed validation."""


class FormatError(FrameDeconvError, ValueError):
    """A file does not follow the expected on-disk format."""
