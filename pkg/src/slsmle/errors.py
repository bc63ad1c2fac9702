"""Exception hierarchy shared by all modules."""


class SlsError(Exception):
    """Base class for library errors."""


class DomainError(SlsError, ValueError):
    """An argument lies outside the domain of a formula."""


class NoPhaseTransition(SlsError):
    """The Gaussian and sub-exponential regimes never cross."""


class AlphaTooSmall(SlsError):
    """Lower-tail slack parameter is below the admissible minimum."""

    def __init__(self, alpha, alpha_min):
        self.alpha = alpha
        self.alpha_min = alpha_min
        super().__init__(
            f"alpha={alpha:.6g} violates the slack condition; "
            f"need alpha >= {alpha_min:.6g} (and alpha < 1/2)")


class ValidationError(SlsError, ValueError):
    """Malformed input object (asymmetric tensor, wrong shape, ...)."""


class PreconditionError(SlsError, ValueError):
    """A stated precondition of an operation does not hold."""


class DomainExit(SlsError):
    """Iterate or evaluation point left the open parameter domain."""


class NonConverged(SlsError):
    """Newton solver hit the iteration cap."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class CertificateInapplicable(SlsError):
    """Preconditions of a certificate failed; the report is attached."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class Unsupported(SlsError):
    """The model does not provide a required capability."""


class DomainEmpty(SlsError, ValueError):
    """Data are incompatible with the model (wrong shape or support)."""
