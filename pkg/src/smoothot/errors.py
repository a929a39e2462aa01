"""Exception hierarchy shared by every module."""


class SmoothOTError(Exception):
    """Base class for all errors raised by the package."""

    #: short machine-readable tag, used by the CLI error record
    code = "error"


class ValidationError(SmoothOTError, ValueError):
    code = "validation"


class DimensionMismatchError(ValidationError):
    code = "dimension_mismatch"


class DegenerateSampleError(SmoothOTError):
    """The LP margin eps0 collapsed to (numerically) zero.

    Happens with duplicated points or samples that are not in general
    position: some cycle of the cost graph has zero mean weight.
    """

    code = "degenerate_sample"

    def __init__(self, eps0, feas_tol):
        self.eps0 = eps0
        self.feas_tol = feas_tol
        super().__init__(
            f"degenerate sample: eps0={eps0!r} <= feas_tol={feas_tol!r}; "
            "remove duplicated points or add a small jitter to the data"
        )


class NegativeCycleError(SmoothOTError):
    """Reduced cost graph has a negative cycle (eps0 set too large)."""

    code = "negative_cycle"

    def __init__(self, cycle, message=None):
        self.cycle = list(cycle)
        super().__init__(message or f"negative cycle through nodes {self.cycle}")


class ProxError(SmoothOTError):
    """The proximal solver could not certify the requested gap."""

    code = "prox_failure"

    def __init__(self, message, best_gap=None, rows=None):
        self.best_gap = best_gap
        self.rows = rows
        super().__init__(message)


class FormatError(SmoothOTError):
    """Corrupt, truncated or otherwise unreadable file."""

    code = "format"


class VersionError(FormatError):
    code = "version"
