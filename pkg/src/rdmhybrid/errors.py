"""Exception hierarchy shared by all stages."""


class RdmHybridError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RdmHybridError, ValueError):
    """Array shapes or orbital counts do not agree."""


class FcidumpError(RdmHybridError, ValueError):
    """Problem reading an FCIDUMP stream.

    ``line`` is the 1-based line number where the problem was detected,
    or ``None`` when the error is not tied to one line.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FcidumpParseError(FcidumpError):
    pass


class FcidumpBoundsError(FcidumpError):
    pass


class FcidumpConsistencyError(FcidumpError):
    pass


class UnsupportedBasisError(RdmHybridError, ValueError):
    pass


class BasisDegeneracyError(RdmHybridError, ValueError):
    pass


class ConvergenceError(RdmHybridError, RuntimeError):
    """An iterative solver ran out of iterations."""


class InstabilityError(RdmHybridError, RuntimeError):
    """A propagation step drifted too far to be trusted."""


class ConfigError(RdmHybridError, ValueError):
    pass


class StageError(RdmHybridError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
